//! Training loop, evaluation and the CSV training log.

use std::io::Write;
use std::time::Instant;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use wsrm_core::par::{self, Exec};

use crate::agent::{Agent, AgentConfig};
use crate::env::{self, EnvConfig, EnvKind, EnvState, Problem, RewardKind};
use crate::error::{LearnError, Result};
use crate::replay::{ReplayBuffer, Transition};

/// Which iterate of a rollout is reported as the solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Emit {
    /// The last state.
    Final,
    /// The visited state with the highest weighted sum rate. Needs no label.
    BestRate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub env: EnvConfig,
    pub agent: AgentConfig,
    /// Total environment-step budget.
    pub steps: usize,
    pub updates_per_step: usize,
    pub buffer_capacity: usize,
    /// The exploration bound is multiplied by `noise_decay` every
    /// `noise_refresh` environment steps.
    pub noise_refresh: usize,
    pub noise_decay: f64,
    pub emit: Emit,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            env: EnvConfig::default(),
            agent: AgentConfig::default(),
            steps: 5000,
            updates_per_step: 1,
            buffer_capacity: 1_000_000,
            noise_refresh: 200,
            noise_decay: 1.0,
            emit: Emit::Final,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: usize,
    pub cumulative_reward: f64,
    /// `NaN` when the instance has no label.
    pub final_rel_error: f64,
    pub convergence_steps: usize,
    pub wall_ms: u128,
    pub seed: u64,
}

pub const LOG_HEADER: &str = "episode,cumulative_reward,final_rel_error,convergence_steps,wall_ms,seed";

pub fn write_log<W: Write>(out: &mut W, log: &[EpisodeLog]) -> std::io::Result<()> {
    writeln!(out, "{LOG_HEADER}")?;
    for e in log {
        writeln!(
            out,
            "{},{:?},{:?},{},{},{}",
            e.episode, e.cumulative_reward, e.final_rel_error, e.convergence_steps, e.wall_ms, e.seed
        )?;
    }
    Ok(())
}

pub fn state_width(config: &TrainConfig, links: usize) -> usize {
    env::state_width(config.env.kind, links)
}

pub fn new_agent(config: &TrainConfig, links: usize) -> Result<Agent> {
    Agent::new(config.agent.clone(), links, state_width(config, links))
}

fn relative_error(p: &Problem, rate: f64) -> f64 {
    p.inst.label.as_ref().map_or(f64::NAN, |l| (l.rate_star - rate).abs() / l.rate_star)
}

fn converged(env: &EnvConfig, label_reward: Option<f64>) -> bool {
    label_reward.is_some_and(|r| r >= -env.epsilon)
}

fn policy_action(env: &EnvConfig, state: &EnvState, offset: &[f64]) -> DVector<f64> {
    env::action_base(env, state) + DVector::from_column_slice(offset)
}

/// Trains `agent` on `problems` for `config.steps` environment steps.
/// Episodes draw an instance uniformly, start from a random feasible state
/// and run for at most `horizon` steps; with the label reward an episode
/// ends early once the reward reaches `-epsilon`.
pub fn train(agent: &mut Agent, problems: &[Problem], config: &TrainConfig) -> Result<Vec<EpisodeLog>> {
    if problems.is_empty() || config.steps == 0 {
        return Ok(Vec::new());
    }
    let env = &config.env;
    if env.reward == RewardKind::Label {
        for p in problems {
            p.label()?;
        }
    }
    let conv = agent.config.conv.is_some();
    let batch = agent.config.batch;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut buffer = ReplayBuffer::new(config.buffer_capacity);
    let mut noise = agent.config.noise_bound;
    let mut log = Vec::new();
    let mut t = 0;
    while t < config.steps {
        let started = Instant::now();
        let p = &problems[rng.random_range(0..problems.len())];
        let gains = conv.then(|| p.gains.clone());
        let mut state = env::reset(p, env, &mut rng)?;
        agent.observe(&state.features);
        let mut cumulative = 0.0;
        let mut steps_to_converge = None;
        let mut k = 0;
        while k < env.horizon && t < config.steps {
            let offset = agent.act(gains.as_deref(), &state.features, noise, &mut rng)?;
            let action = policy_action(env, &state, &offset);
            let out = env::step(p, env, &state, &action)?;
            let done = env.reward == RewardKind::Label && converged(env, out.label_reward);
            if converged(env, out.label_reward) && steps_to_converge.is_none() {
                steps_to_converge = Some(k + 1);
            }
            cumulative += out.reward;
            agent.observe(&out.next.features);
            buffer.push(Transition {
                state: std::mem::take(&mut state.features),
                action: offset,
                reward: out.reward,
                next_state: out.next.features.clone(),
                done,
                gains: gains.clone(),
            });
            state = out.next;
            t += 1;
            k += 1;
            if config.noise_refresh > 0 && t % config.noise_refresh == 0 {
                noise *= config.noise_decay;
            }
            if buffer.len() >= batch {
                for _ in 0..config.updates_per_step {
                    let sample = buffer.sample(&mut rng, batch)?;
                    agent.update(&sample, &mut rng)?;
                }
            }
            if done {
                break;
            }
        }
        log.push(EpisodeLog {
            episode: log.len(),
            cumulative_reward: cumulative,
            final_rel_error: relative_error(p, state.rate(p.inst.weights())),
            convergence_steps: steps_to_converge.unwrap_or(k),
            wall_ms: started.elapsed().as_millis(),
            seed: config.seed,
        });
    }
    Ok(log)
}

/// Starting points for evaluation rollouts.
#[derive(Debug, Clone, PartialEq)]
pub enum EvalStart {
    /// Random feasible start drawn from `(seed, instance index)`.
    Random(u64),
    /// One log-SINR vector per instance (BCD environment).
    Given(Vec<DVector<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub index: usize,
    pub rel_error: f64,
    pub steps: usize,
    pub cumulative_reward: f64,
    pub rate: f64,
    pub power: Vec<f64>,
    pub feasible: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(xs: impl Iterator<Item = f64> + Clone) -> Self {
        let n = xs.clone().count();
        if n == 0 {
            return Self::default();
        }
        let mean = xs.clone().sum::<f64>() / n as f64;
        let var = xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        Self { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Evaluation {
    pub rows: Vec<EvalRow>,
    pub rel_error: MeanStd,
    pub steps: MeanStd,
    pub cumulative_reward: MeanStd,
    pub all_feasible: bool,
}

fn eval_start(p: &Problem, env: &EnvConfig, start: &EvalStart, i: usize) -> Result<EnvState> {
    match start {
        EvalStart::Random(seed) => env::reset(p, env, &mut wsrm_core::generate::item_rng(*seed, i as u64)),
        EvalStart::Given(g) => {
            let g = g.get(i).ok_or(LearnError::ShapeMismatch { expected: i + 1, found: g.len() })?;
            env::start_at(p, g.clone(), env)
        }
    }
}

/// Noise-free rollout of the policy on one instance. Stops once the label
/// reward reaches `-epsilon`; the start state counts as step 0.
pub fn rollout(agent: &Agent, p: &Problem, env: &EnvConfig, emit: Emit, start: EnvState) -> Result<EvalRow> {
    p.label()?;
    let w = p.inst.weights();
    let gstar = &p.label()?.gamma_star;
    let gains = agent.config.conv.is_some().then(|| p.gains.clone());
    let mut state = start;
    let mut best = (state.rate(w), state.power.clone());
    let mut cumulative = 0.0;
    let mut steps = 0;
    let mut reached = converged(env, Some(env::label_reward(w, &state.gamma_tilde, gstar)));
    while !reached && steps < env.horizon {
        let offset = agent.policy(gains.as_deref(), &state.features)?;
        let action = policy_action(env, &state, &offset);
        let out = env::step(p, env, &state, &action)?;
        cumulative += out.reward;
        state = out.next;
        steps += 1;
        let rate = state.rate(w);
        if rate > best.0 {
            best = (rate, state.power.clone());
        }
        reached = converged(env, out.label_reward);
    }
    let (rate, power) = match emit {
        Emit::Final => (state.rate(w), state.power),
        Emit::BestRate => best,
    };
    let feasible = p.inst.is_feasible(&power);
    Ok(EvalRow {
        index: p.index,
        rel_error: relative_error(p, rate),
        steps,
        cumulative_reward: cumulative,
        rate,
        power: power.iter().copied().collect(),
        feasible,
    })
}

/// Evaluates the frozen agent on every instance, in parallel when `exec`
/// allows; rows come back in dataset order.
pub fn evaluate(
    agent: &Agent,
    problems: &[Problem],
    env: &EnvConfig,
    emit: Emit,
    start: &EvalStart,
    exec: Exec,
) -> Result<Evaluation> {
    let rows = par::map_indices(exec, problems.len(), |i| {
        let p = &problems[i];
        rollout(agent, p, env, emit, eval_start(p, env, start, i)?)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(summarize(rows))
}

pub fn summarize(rows: Vec<EvalRow>) -> Evaluation {
    Evaluation {
        rel_error: MeanStd::of(rows.iter().map(|r| r.rel_error)),
        steps: MeanStd::of(rows.iter().map(|r| r.steps as f64)),
        cumulative_reward: MeanStd::of(rows.iter().map(|r| r.cumulative_reward)),
        all_feasible: rows.iter().all(|r| r.feasible),
        rows,
    }
}

/// Configuration of the pure DDPG baseline: power-increment actions.
pub fn pure_ddpg_config(base: &TrainConfig) -> TrainConfig {
    let mut c = base.clone();
    c.env.kind = EnvKind::PureDdpg;
    c.env.reward = RewardKind::SumRate;
    c.agent.algorithm = crate::agent::Algorithm::Ddpg;
    c
}

/// Configuration of the pure TD3 baseline: power actions.
pub fn pure_td3_config(base: &TrainConfig) -> TrainConfig {
    let mut c = base.clone();
    c.env.kind = EnvKind::PureTd3;
    c.env.reward = RewardKind::SumRate;
    c.agent.algorithm = crate::agent::Algorithm::Td3;
    c
}

const MODEL_FORMAT: &str = "wsrm-model";
const MODEL_VERSION: u32 = 1;

/// A trained agent together with the environment it was trained in, so it
/// can be evaluated without restating the configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub config: TrainConfig,
    pub agent: Agent,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    config: TrainConfig,
    agent: String,
}

impl TrainedModel {
    pub fn to_json(&self) -> Result<String> {
        let f = ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            config: self.config.clone(),
            agent: self.agent.to_json()?,
        };
        serde_json::to_string(&f).map_err(|e| LearnError::Checkpoint(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: ModelFile = serde_json::from_str(s).map_err(|e| LearnError::Checkpoint(e.to_string()))?;
        if f.format != MODEL_FORMAT || f.version != MODEL_VERSION {
            return Err(LearnError::Checkpoint(format!("unsupported model {} v{}", f.format, f.version)));
        }
        Ok(Self { config: f.config, agent: Agent::from_json(&f.agent)? })
    }
}

/// Builds and trains an agent in one call.
pub fn train_new(problems: &[Problem], config: &TrainConfig) -> Result<(Agent, Vec<EpisodeLog>)> {
    let links = problems.first().map_or(0, Problem::links);
    let mut agent = new_agent(config, links)?;
    let log = train(&mut agent, problems, config)?;
    Ok((agent, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use wsrm_core::oracle::{label_instance, LabelStrategy};
    use wsrm_core::problem::example_one;

    fn tiny_config() -> TrainConfig {
        let mut c = TrainConfig::default();
        c.agent.hidden = 8;
        c.agent.depth = 2;
        c.agent.noise_bound = 0.5;
        c.steps = 60;
        c.env.horizon = 10;
        c
    }

    fn labeled() -> Vec<Problem> {
        let inst = example_one();
        let label = label_instance(&inst, LabelStrategy::Multistart { starts: 16 }, 0, Exec::Sequential).unwrap();
        vec![Problem::new(0, inst.with_label(label)).unwrap()]
    }

    #[test]
    fn zero_steps_keep_initialization() {
        let p = labeled();
        let mut c = tiny_config();
        c.steps = 0;
        let (a, log) = train_new(&p, &c).unwrap();
        assert!(log.is_empty());
        assert_eq!(a, new_agent(&c, 3).unwrap());
    }

    #[test]
    fn same_seed_same_log() {
        let p = labeled();
        let c = tiny_config();
        let strip = |mut l: Vec<EpisodeLog>| {
            l.iter_mut().for_each(|e| e.wall_ms = 0);
            l
        };
        let (a1, l1) = train_new(&p, &c).unwrap();
        let (a2, l2) = train_new(&p, &c).unwrap();
        assert_eq!(strip(l1), strip(l2));
        assert_eq!(a1, a2);
    }

    #[test]
    fn label_start_converges_in_zero_steps() {
        let p = labeled();
        let c = tiny_config();
        let a = new_agent(&c, 3).unwrap();
        let start = EvalStart::Given(vec![p[0].label().unwrap().gamma_star.clone()]);
        let e = evaluate(&a, &p, &c.env, Emit::Final, &start, Exec::Sequential).unwrap();
        assert_eq!(e.rows[0].steps, 0);
        assert!(e.rows[0].rel_error < 1e-9);
    }

    #[test]
    fn empty_dataset_gives_empty_metrics() {
        let c = tiny_config();
        let a = new_agent(&c, 3).unwrap();
        let e = evaluate(&a, &[], &c.env, Emit::Final, &EvalStart::Random(0), Exec::Sequential).unwrap();
        assert!(e.rows.is_empty());
    }

    #[test]
    fn model_round_trip() {
        let c = tiny_config();
        let m = TrainedModel { agent: new_agent(&c, 3).unwrap(), config: c };
        assert_eq!(TrainedModel::from_json(&m.to_json().unwrap()).unwrap(), m);
    }

    #[test]
    fn log_csv_has_header() {
        let mut out = Vec::new();
        write_log(&mut out, &[]).unwrap();
        assert_eq!(String::from_utf8(out).unwrap().trim(), LOG_HEADER);
    }
}
