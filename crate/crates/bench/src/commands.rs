//! The subcommands. Each returns the text it would write so tests can call
//! them directly; `main` decides where the text goes.

use std::collections::BTreeMap;
use std::time::Instant;

use wsrm_core::bcd::{self, multistart_bcd, BcdConfig, BcdState};
use wsrm_core::beamforming::{fixed_precoder_bcd, ip_bcd_solve, IpBcdConfig};
use wsrm_core::generate::{self, BeamGenConfig, GainModel, GenConfig};
use wsrm_core::oracle::{self, LabelStrategy};
use wsrm_core::problem::{self, example_one};
use wsrm_core::{record, Exec, WsrmInstance};
use wsrm_learn::agent::{Algorithm, NoiseKind};
use wsrm_learn::env::{self, EnvKind, Problem, RateFeature, RewardKind};
use wsrm_learn::neural::ConvSpec;
use wsrm_learn::train::{self, Emit, EvalStart, Evaluation, MeanStd, TrainConfig, TrainedModel};

use crate::config::*;
use crate::error::{BenchError, Result};

/// Starts used by the `multistart` method and by `example1`.
pub const MULTISTART_STARTS: usize = 64;

fn exec(o: &Options) -> Exec {
    if o.parallel.unwrap_or(true) {
        Exec::Parallel
    } else {
        Exec::Sequential
    }
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new().from_writer(Vec::new())
}

fn finish(meta: String, w: csv::Writer<Vec<u8>>) -> Result<String> {
    let body = w.into_inner().map_err(|e| BenchError::Io(std::io::Error::other(e.to_string())))?;
    Ok(format!("{meta}\n{}", String::from_utf8(body).expect("csv is utf-8")))
}

fn f(x: f64) -> String {
    format!("{x:?}")
}

pub fn gen_config(o: &Options) -> GenConfig {
    let links = o.links.unwrap_or(3);
    let model = match o.model.unwrap_or(ModelKind::Precoder) {
        ModelKind::Precoder => GainModel::Precoder { tx: o.tx_antennas.unwrap_or(3), rx: o.rx_antennas.unwrap_or(2) },
        ModelKind::Rayleigh => GainModel::Rayleigh,
        ModelKind::Uniform => GainModel::Uniform { lo: 0.1, hi: 1.0 },
    };
    GenConfig { links, model, ..GenConfig::default() }
}

/// Instance records, one block per instance.
pub fn cmd_gen(o: &Options) -> Result<String> {
    let seed = o.seed()?;
    let data = generate::generate_dataset(&gen_config(o), o.count.unwrap_or(2200), seed, exec(o))?;
    Ok(format!("{}\n{}", o.metadata("gen"), record::serialize_dataset(&data)))
}

pub fn load_dataset(o: &Options) -> Result<Vec<WsrmInstance>> {
    Ok(record::parse_dataset(&read(o.input()?)?)?)
}

pub fn label_strategy(o: &Options) -> LabelStrategy {
    match o.label_strategy.unwrap_or(LabelArg::Grid) {
        LabelArg::Grid => LabelStrategy::Grid { resolution: o.resolution.unwrap_or(oracle::DEFAULT_RESOLUTION) },
        LabelArg::Multistart => LabelStrategy::Multistart { starts: o.starts.unwrap_or(MULTISTART_STARTS) },
    }
}

pub fn cmd_label(o: &Options) -> Result<String> {
    let seed = o.seed()?;
    let data = load_dataset(o)?;
    let labeled = oracle::label_dataset(&data, label_strategy(o), seed, exec(o))?;
    Ok(format!("{}\n{}", o.metadata("label"), record::serialize_dataset(&labeled)))
}

/// Training configuration: the preset for the chosen agent, then any
/// flags.
pub fn train_config(o: &Options) -> Result<TrainConfig> {
    let kind = o.agent.unwrap_or(AgentKind::Td3Bcd);
    let mut c = crate::defaults::preset_config(o.preset.unwrap_or(Preset::Desk), kind);
    c.seed = o.seed()?;
    c.agent.seed = c.seed;
    if let Some(r) = o.reward {
        c.env.reward = match r {
            RewardArg::Label => RewardKind::Label,
            RewardArg::Sumrate => RewardKind::SumRate,
        };
    }
    if let Some(x) = o.rate_feature {
        c.env.rate_feature = match x {
            RateFeatureArg::InverseSinr => RateFeature::InverseSinr,
            RateFeatureArg::LogRate => RateFeature::LogRate,
        };
    }
    if let Some(x) = o.noise {
        c.agent.noise = match x {
            NoiseArg::OneSided => NoiseKind::OneSided,
            NoiseArg::Symmetric => NoiseKind::Symmetric,
        };
    }
    if let Some(x) = o.emit {
        c.emit = match x {
            EmitArg::Final => Emit::Final,
            EmitArg::Best => Emit::BestRate,
        };
    }
    if let Some(k) = o.conv_kernel {
        c.agent.conv = Some(ConvSpec { kernel: k, stride: o.conv_stride.unwrap_or(1) });
    }
    macro_rules! set {
        ($($opt:ident => $($dst:ident).+;)*) => {
            $(if let Some(v) = o.$opt { c.$($dst).+ = v; })*
        };
    }
    set! {
        steps => steps;
        horizon => env.horizon;
        epsilon => env.epsilon;
        residual => env.residual;
        updates_per_step => updates_per_step;
        buffer_capacity => buffer_capacity;
        noise_refresh => noise_refresh;
        noise_decay => noise_decay;
        discount => agent.discount;
        actor_lr => agent.actor_lr;
        critic_lr => agent.critic_lr;
        noise_bound => agent.noise_bound;
        tau => agent.tau;
        batch => agent.batch;
        policy_delay => agent.policy_delay;
        target_noise => agent.target_noise;
        target_clip => agent.target_clip;
        hidden => agent.hidden;
        depth => agent.depth;
        actor_head_scale => agent.actor_head_scale;
        normalize => agent.normalize;
    }
    if c.env.horizon == 0 || c.agent.batch == 0 {
        return Err(BenchError::Config("horizon and batch must be positive".into()));
    }
    Ok(c)
}

/// Output of `train`: the model JSON and the training log CSV.
pub struct Trained {
    pub model: TrainedModel,
    pub model_json: String,
    pub log_csv: String,
}

pub fn cmd_train(o: &Options) -> Result<Trained> {
    let config = train_config(o)?;
    let problems = env::prepare(&load_dataset(o)?)?;
    let (agent, log) = train::train_new(&problems, &config)?;
    let mut out = Vec::new();
    train::write_log(&mut out, &log)?;
    let log_csv = format!("{}\n{}", o.metadata("train"), String::from_utf8(out).expect("log is utf-8"));
    let model = TrainedModel { config, agent };
    Ok(Trained { model_json: model.to_json()?, model, log_csv })
}

fn load_model(path: &str) -> Result<TrainedModel> {
    Ok(TrainedModel::from_json(&read(std::path::Path::new(path))?)?)
}

fn evaluate_model(model: &TrainedModel, problems: &[Problem], seed: u64, exec: Exec) -> Result<Evaluation> {
    Ok(train::evaluate(&model.agent, problems, &model.config.env, model.config.emit, &EvalStart::Random(seed), exec)?)
}

/// Per-instance rows plus the aggregate as trailing comment lines.
pub fn cmd_eval(o: &Options) -> Result<String> {
    let seed = o.seed()?;
    let path = o.checkpoint.first().ok_or_else(|| BenchError::MissingCheckpoint("eval".into()))?;
    let path = path.split_once('=').map_or(path.as_str(), |(_, p)| p);
    let model = load_model(path)?;
    let problems = env::prepare(&load_dataset(o)?)?;
    let e = evaluate_model(&model, &problems, seed, exec(o))?;
    let mut w = csv_writer();
    w.write_record(["index", "rel_error", "steps", "reward", "rate", "feasible"])?;
    for r in &e.rows {
        w.write_record([
            r.index.to_string(),
            f(r.rel_error),
            r.steps.to_string(),
            f(r.cumulative_reward),
            f(r.rate),
            r.feasible.to_string(),
        ])?;
    }
    finish(o.metadata("eval"), w)
}

/// One `compare` row.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub method: &'static str,
    pub index: usize,
    pub rel_error: f64,
    pub steps: usize,
    pub reward: f64,
    pub wall_ms: u128,
}

/// Plain BCD from the same random start the agents get. Stops like a
/// rollout: once the label reward reaches `-epsilon`, or when the objective
/// settles.
fn bcd_row(p: &Problem, seed: u64, epsilon: f64) -> Result<(f64, usize, f64)> {
    let label = p.label()?;
    let w = p.inst.weights();
    let start = env::reset(p, &env::EnvConfig::default(), &mut generate::item_rng(seed, p.index as u64))?;
    let mut gt = start.gamma_tilde.clone();
    let mut reward = 0.0;
    let mut steps = 0;
    if env::label_reward(w, &gt, &label.gamma_star) < -epsilon {
        let cfg = BcdConfig::default();
        let mut state = BcdState::initial(bcd::update_y(&gt));
        while steps < cfg.max_outer {
            let prev = state.objective;
            state = bcd::bcd_step(&p.ops, w, &state)?;
            steps += 1;
            let r = env::label_reward(w, &state.gamma_tilde, &label.gamma_star);
            reward += r;
            if r >= -epsilon || (steps > 1 && (state.objective - prev).abs() <= cfg.tolerance * prev.abs().max(1.0)) {
                break;
            }
        }
        gt = state.gamma_tilde;
    }
    let rate = problem::weighted_rate_log(w, &gt);
    Ok(((label.rate_star - rate).abs() / label.rate_star, steps, reward))
}

fn multistart_row(p: &Problem, seed: u64) -> Result<(f64, usize, f64)> {
    let label = p.label()?;
    let m = multistart_bcd(&p.inst, MULTISTART_STARTS, oracle::instance_seed(seed, p.index), &BcdConfig::default(), Exec::Sequential)?;
    let r = env::label_reward(p.inst.weights(), &m.best.gamma_tilde, &label.gamma_star);
    Ok(((label.rate_star - m.best.rate).abs() / label.rate_star, m.best.iterations, r))
}

fn checkpoints(o: &Options) -> BTreeMap<String, String> {
    o.checkpoint
        .iter()
        .filter_map(|c| c.split_once('=').map(|(m, p)| (m.to_string(), p.to_string())))
        .collect()
}

pub fn compare_rows(o: &Options) -> Result<Vec<CompareRow>> {
    let seed = o.seed()?;
    let problems = env::prepare(&load_dataset(o)?)?;
    for p in &problems {
        p.label()?;
    }
    let methods = if o.methods.is_empty() { vec![Method::Bcd, Method::Multistart] } else { o.methods.clone() };
    let ckpt = checkpoints(o);
    let epsilon = o.epsilon.unwrap_or(env::EnvConfig::default().epsilon);
    let ex = exec(o);
    let mut rows = Vec::new();
    for m in methods {
        let name = m.name();
        let timed = |f: &(dyn Fn(&Problem) -> Result<(f64, usize, f64)> + Sync)| -> Result<Vec<CompareRow>> {
            wsrm_core::par::map_slice(ex, &problems, |p| {
                let t = Instant::now();
                let (rel_error, steps, reward) = f(p)?;
                Ok(CompareRow { method: name, index: p.index, rel_error, steps, reward, wall_ms: t.elapsed().as_millis() })
            })
            .into_iter()
            .collect()
        };
        let part = match m {
            Method::Bcd => timed(&|p| bcd_row(p, seed, epsilon))?,
            Method::Multistart => timed(&|p| multistart_row(p, seed))?,
            _ => {
                let path = ckpt.get(name).ok_or_else(|| BenchError::MissingCheckpoint(name.into()))?;
                let model = load_model(path)?;
                timed(&|p| {
                    let start = env::reset(p, &model.config.env, &mut generate::item_rng(seed, p.index as u64))?;
                    let r = train::rollout(&model.agent, p, &model.config.env, model.config.emit, start)?;
                    Ok((r.rel_error, r.steps, r.cumulative_reward))
                })?
            }
        };
        rows.extend(part);
    }
    Ok(rows)
}

pub struct Comparison {
    pub rows_csv: String,
    pub summary_csv: String,
}

pub fn cmd_compare(o: &Options) -> Result<Comparison> {
    let rows = compare_rows(o)?;
    let timing = o.timing.unwrap_or(false);
    let mut w = csv_writer();
    let mut header = vec!["method", "index", "rel_error", "steps", "reward"];
    if timing {
        header.push("wall_ms");
    }
    w.write_record(&header)?;
    for r in &rows {
        let mut rec = vec![r.method.to_string(), r.index.to_string(), f(r.rel_error), r.steps.to_string(), f(r.reward)];
        if timing {
            rec.push(r.wall_ms.to_string());
        }
        w.write_record(&rec)?;
    }
    let rows_csv = finish(o.metadata("compare"), w)?;

    let mut s = csv_writer();
    s.write_record(["method", "count", "rel_error_mean", "rel_error_std", "steps_mean", "steps_std", "reward_mean", "reward_std"])?;
    let mut names: Vec<&str> = Vec::new();
    for r in &rows {
        if !names.contains(&r.method) {
            names.push(r.method);
        }
    }
    for name in names {
        let of = |g: &dyn Fn(&CompareRow) -> f64| {
            MeanStd::of(rows.iter().filter(|r| r.method == name).map(g).collect::<Vec<_>>().into_iter())
        };
        let e = of(&|r| r.rel_error);
        let st = of(&|r| r.steps as f64);
        let rw = of(&|r| r.reward);
        let n = rows.iter().filter(|r| r.method == name).count();
        s.write_record([name.to_string(), n.to_string(), f(e.mean), f(e.std), f(st.mean), f(st.std), f(rw.mean), f(rw.std)])?;
    }
    let summary_csv = finish(o.metadata("compare-summary"), s)?;
    Ok(Comparison { rows_csv, summary_csv })
}

/// Multistart BCD on the Example-1 instance: the per-link rate trace of
/// every start, one row per outer iteration.
pub fn cmd_example1(o: &Options) -> Result<String> {
    let seed = o.seed.unwrap_or(0);
    let starts = o.starts.unwrap_or(MULTISTART_STARTS);
    let inst = example_one();
    let ops = problem::build_operators(&inst)?;
    let w = inst.weights();
    let cfg = BcdConfig::default();
    let mut out = csv_writer();
    let l = inst.links();
    let mut header = vec!["start".to_string(), "iteration".to_string(), "sum_rate".to_string()];
    header.extend((1..=l).map(|i| format!("rate_{i}")));
    out.write_record(&header)?;
    for s in 0..starts {
        let mut state = BcdState::initial(bcd::random_start(seed, s as u64, l));
        for k in 0..cfg.max_outer {
            let prev = state.objective;
            state = bcd::bcd_step(&ops, w, &state)?;
            let rates: Vec<f64> = (0..l).map(|i| w[i] * problem::softplus(state.gamma_tilde[i])).collect();
            let mut rec = vec![s.to_string(), (k + 1).to_string(), f(rates.iter().sum())];
            rec.extend(rates.iter().map(|r| f(*r)));
            out.write_record(&rec)?;
            if k > 0 && (state.objective - prev).abs() <= cfg.tolerance * prev.abs().max(1.0) {
                break;
            }
        }
    }
    finish(o.metadata("example1"), out)
}

/// IP-BCD against power control with the fixed suboptimal precoder.
pub fn cmd_beamform(o: &Options) -> Result<String> {
    let seed = o.seed()?;
    let cfg = BeamGenConfig {
        links: o.links.unwrap_or(4),
        tx_antennas: o.tx_antennas.unwrap_or(4),
        rx_antennas: o.rx_antennas.unwrap_or(2),
        ..BeamGenConfig::default()
    };
    let data = generate::generate_beamforming_dataset(&cfg, o.count.unwrap_or(50), seed, exec(o))?;
    let ip = IpBcdConfig::default();
    let rows = wsrm_core::par::map_slice(exec(o), &data, |b| -> Result<(f64, f64, usize)> {
        let pair = wsrm_core::beamforming::suboptimal_precoder(b)?;
        let fixed = fixed_precoder_bcd(b, &pair, &ip.bcd)?;
        let sol = ip_bcd_solve(b, &ip)?;
        Ok((fixed.rate, sol.rate, sol.rounds))
    });
    let mut w = csv_writer();
    w.write_record(["index", "fixed_precoder_rate", "ip_bcd_rate", "rounds", "ip_bcd_not_worse"])?;
    for (i, r) in rows.into_iter().enumerate() {
        let (fixed, ipr, rounds) = r?;
        w.write_record([i.to_string(), f(fixed), f(ipr), rounds.to_string(), (ipr >= fixed - 1e-6).to_string()])?;
    }
    finish(o.metadata("beamform"), w)
}

/// Environment kind and algorithm for an agent flag.
pub fn agent_shape(kind: AgentKind) -> (EnvKind, Algorithm) {
    match kind {
        AgentKind::DdpgBcd => (EnvKind::Bcd, Algorithm::Ddpg),
        AgentKind::Td3Bcd => (EnvKind::Bcd, Algorithm::Td3),
        AgentKind::PureDdpg => (EnvKind::PureDdpg, Algorithm::Ddpg),
        AgentKind::PureTd3 => (EnvKind::PureTd3, Algorithm::Td3),
    }
}
