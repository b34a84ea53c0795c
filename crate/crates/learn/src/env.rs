//! Environments for the actor-critic trainers.
//!
//! In the BCD environment the action `a` sets the entropy block through
//! `y2 = sigmoid(a)`, and the transition solves the log-SINR block exactly
//! with the fixed-point map. Feeding `a = gt` reproduces one plain BCD step.
//! The two pure-learning baselines act on power directly.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use wsrm_core::bcd::{self, START_RANGE};
use wsrm_core::pf::KrauseOptions;
use wsrm_core::problem::{self, DerivedOperators};
use wsrm_core::{Label, WsrmInstance};

use crate::error::{LearnError, Result};

/// Log-SINR values fed to networks are clipped to this magnitude. Links that
/// are switched off sit near `-70`, which would dominate the inputs.
pub const FEATURE_CLIP: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum RewardKind {
    /// Negative weighted squared distance of per-link rates to the label.
    Label,
    /// Weighted sum rate of the next state.
    SumRate,
}

/// Last feature block of the BCD state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum RateFeature {
    /// `w_l / (1 + gamma_l)`.
    InverseSinr,
    /// `w_l log(1 + gamma_l)`.
    LogRate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum EnvKind {
    Bcd,
    /// Action is a power increment; state `{gamma, p, Fp + sigma, w/(1+gamma)}`.
    PureDdpg,
    /// Action is the power vector; state `{G, p_prev, w log(1+gamma)}`.
    PureTd3,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EnvConfig {
    pub kind: EnvKind,
    pub reward: RewardKind,
    pub rate_feature: RateFeature,
    /// Episode length.
    pub horizon: usize,
    /// An episode ends once the label reward reaches `-epsilon`.
    pub epsilon: f64,
    /// Add the current log-SINR to the policy output in the BCD
    /// environment, so a zero output reproduces a plain BCD step.
    pub residual: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self { kind: EnvKind::Bcd, reward: RewardKind::Label, rate_feature: RateFeature::InverseSinr, horizon: 50, epsilon: 1e-4, residual: false }
    }
}

/// Instance with its operators precomputed.
#[derive(Debug, Clone)]
pub struct Problem {
    pub index: usize,
    pub inst: WsrmInstance,
    pub ops: DerivedOperators,
    pub gains: Arc<DMatrix<f64>>,
}

impl Problem {
    pub fn new(index: usize, inst: WsrmInstance) -> Result<Self> {
        let ops = problem::build_operators(&inst)?;
        let gains = Arc::new(inst.gains().clone());
        Ok(Self { index, inst, ops, gains })
    }

    pub fn label(&self) -> Result<&Label> {
        self.inst.label.as_ref().ok_or(LearnError::MissingLabel(self.index))
    }

    pub fn links(&self) -> usize {
        self.inst.links()
    }
}

pub fn prepare(dataset: &[WsrmInstance]) -> Result<Vec<Problem>> {
    dataset.iter().enumerate().map(|(i, inst)| Problem::new(i, inst.clone())).collect()
}

/// One environment state. `gamma_tilde` is the log-SINR of `power`;
/// `features` is what the networks see.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub features: Vec<f64>,
    pub gamma_tilde: DVector<f64>,
    pub power: DVector<f64>,
    /// Power of the previous state (pure TD3 baseline only).
    pub previous_power: DVector<f64>,
}

impl EnvState {
    pub fn rate(&self, w: &DVector<f64>) -> f64 {
        problem::weighted_rate_log(w, &self.gamma_tilde)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub next: EnvState,
    pub reward: f64,
    /// Reward under the label, whatever the configured reward; `None`
    /// without a label.
    pub label_reward: Option<f64>,
}

pub fn state_width(kind: EnvKind, links: usize) -> usize {
    match kind {
        EnvKind::Bcd => 6 * links + 1,
        EnvKind::PureDdpg => 4 * links,
        EnvKind::PureTd3 => links * links + 2 * links,
    }
}

/// `-sum_l w_l (log((1 + e^gt_l) / (1 + e^gt*_l)))^2`.
pub fn label_reward(w: &DVector<f64>, gamma_tilde: &DVector<f64>, gamma_star: &DVector<f64>) -> f64 {
    -(0..w.len())
        .map(|l| {
            let d = problem::softplus(gamma_tilde[l]) - problem::softplus(gamma_star[l]);
            w[l] * d * d
        })
        .sum::<f64>()
}

fn clip(x: f64) -> f64 {
    x.clamp(-FEATURE_CLIP, FEATURE_CLIP)
}

fn check_budget(p: &Problem, power: &DVector<f64>) -> Result<()> {
    let used = p.ops.power_weights.dot(power);
    if used > p.ops.budget * (1.0 + 1e-6) || power.iter().any(|x| *x < 0.0) {
        return Err(LearnError::Core(wsrm_core::WsrmError::Certificate(format!(
            "state power uses {used}, budget {}",
            p.ops.budget
        ))));
    }
    Ok(())
}

/// BCD-environment state for log-SINR `gt`. Power is recovered from the
/// linear SINR `e^gt`.
pub fn build_state(p: &Problem, gamma_tilde: DVector<f64>, rate_feature: RateFeature) -> Result<EnvState> {
    let power = problem::power_from_gamma(&p.ops, &gamma_tilde.map(f64::exp))?;
    check_budget(p, &power)?;
    let features = bcd_features(p, &gamma_tilde, &power, rate_feature);
    Ok(EnvState { features, previous_power: power.clone(), gamma_tilde, power })
}

fn bcd_features(p: &Problem, gt: &DVector<f64>, power: &DVector<f64>, rate_feature: RateFeature) -> Vec<f64> {
    let l = p.links();
    let w = p.inst.weights();
    let sigma = &p.ops.normalized_noise;
    let load = &p.ops.interference * power + sigma;
    let mut f = Vec::with_capacity(6 * l + 1);
    f.extend(sigma.iter());
    f.extend(w.iter());
    f.push(p.ops.budget);
    f.extend(gt.iter().map(|x| clip(*x)));
    f.extend(power.iter());
    f.extend(load.iter());
    f.extend((0..l).map(|i| match rate_feature {
        RateFeature::InverseSinr => w[i] / (1.0 + gt[i].exp()),
        RateFeature::LogRate => w[i] * problem::softplus(gt[i]),
    }));
    f
}

fn log_sinr_of(inst: &WsrmInstance, power: &DVector<f64>) -> DVector<f64> {
    problem::sinr(inst, power).map(|s| if s > 0.0 { s.ln() } else { f64::NEG_INFINITY })
}

fn baseline_state(p: &Problem, kind: EnvKind, power: DVector<f64>, previous_power: DVector<f64>) -> EnvState {
    let l = p.links();
    let w = p.inst.weights();
    let gamma = problem::sinr(&p.inst, &power);
    let gamma_tilde = log_sinr_of(&p.inst, &power);
    let mut f = Vec::with_capacity(state_width(kind, l));
    match kind {
        EnvKind::PureDdpg => {
            let load = &p.ops.interference * &power + &p.ops.normalized_noise;
            f.extend(gamma.iter());
            f.extend(power.iter());
            f.extend(load.iter());
            f.extend((0..l).map(|i| w[i] / (1.0 + gamma[i])));
        }
        EnvKind::PureTd3 => {
            let g = p.inst.gains();
            for r in 0..l {
                f.extend(g.row(r).iter());
            }
            f.extend(previous_power.iter());
            f.extend((0..l).map(|i| w[i] * gamma[i].ln_1p()));
        }
        EnvKind::Bcd => unreachable!("handled by build_state"),
    }
    EnvState { features: f, gamma_tilde, power, previous_power }
}

/// Radial projection onto `{p >= 0, m^T p <= P}`.
pub fn project_power(p: &Problem, raw: &DVector<f64>) -> DVector<f64> {
    let mut q = raw.map(|x| if x.is_finite() { x.max(0.0) } else { 0.0 });
    let used = p.ops.power_weights.dot(&q);
    if used > p.ops.budget {
        q *= p.ops.budget / used;
    }
    q
}

/// Random feasible start. For the BCD environment `y2` is drawn uniformly
/// and one fixed-point pass maps it to a log-SINR vector on the boundary;
/// the baselines start from a random feasible power vector.
pub fn reset(p: &Problem, config: &EnvConfig, rng: &mut impl Rng) -> Result<EnvState> {
    let l = p.links();
    match config.kind {
        EnvKind::Bcd => {
            let y2 = DVector::from_fn(l, |_, _| rng.random_range(START_RANGE.0..START_RANGE.1));
            let (gt, _) = bcd::solve_gamma_block(&p.ops.extended, p.inst.weights(), &y2, KrauseOptions::default())?;
            build_state(p, gt, config.rate_feature)
        }
        kind => {
            let raw = DVector::from_fn(l, |_, _| rng.random_range(0.0..1.0));
            let scale = p.ops.budget / p.ops.power_weights.dot(&raw);
            let power = raw * scale * rng.random_range(0.1..1.0);
            Ok(baseline_state(p, kind, power.clone(), power))
        }
    }
}

/// Start from a given log-SINR vector (BCD environment).
pub fn start_at(p: &Problem, gamma_tilde: DVector<f64>, config: &EnvConfig) -> Result<EnvState> {
    build_state(p, gamma_tilde, config.rate_feature)
}

/// Base added to the policy output: the log-SINR for the residual
/// BCD environment, zero otherwise.
pub fn action_base(config: &EnvConfig, state: &EnvState) -> DVector<f64> {
    match config.kind {
        EnvKind::Bcd if config.residual => state.gamma_tilde.clone(),
        _ => DVector::zeros(state.gamma_tilde.len()),
    }
}

fn reward_of(p: &Problem, config: &EnvConfig, next: &EnvState) -> Result<(f64, Option<f64>)> {
    let w = p.inst.weights();
    let label = p.inst.label.as_ref().map(|l| label_reward(w, &next.gamma_tilde, &l.gamma_star));
    let reward = match config.reward {
        RewardKind::Label => label.ok_or(LearnError::MissingLabel(p.index))?,
        RewardKind::SumRate => next.rate(w),
    };
    Ok((reward, label))
}

/// Log-SINR reached from action `a`: `y2 = sigmoid(a)`, then the exact
/// solution of the log-SINR block.
pub fn bcd_transition(p: &Problem, action: &DVector<f64>) -> Result<DVector<f64>> {
    if action.len() != p.links() {
        return Err(LearnError::ShapeMismatch { expected: p.links(), found: action.len() });
    }
    let y2 = bcd::update_y(action);
    let (gt, _) = bcd::solve_gamma_block(&p.ops.extended, p.inst.weights(), &y2, KrauseOptions::default())?;
    Ok(gt)
}

/// Applies `action` to `state` under `config`.
pub fn step(p: &Problem, config: &EnvConfig, state: &EnvState, action: &DVector<f64>) -> Result<StepResult> {
    if action.len() != p.links() {
        return Err(LearnError::ShapeMismatch { expected: p.links(), found: action.len() });
    }
    let next = match config.kind {
        EnvKind::Bcd => build_state(p, bcd_transition(p, action)?, config.rate_feature)?,
        EnvKind::PureDdpg => {
            let power = project_power(p, &(&state.power + action));
            baseline_state(p, EnvKind::PureDdpg, power, state.power.clone())
        }
        EnvKind::PureTd3 => {
            let power = project_power(p, action);
            baseline_state(p, EnvKind::PureTd3, power, state.power.clone())
        }
    };
    check_budget(p, &next.power)?;
    let (reward, label_reward) = reward_of(p, config, &next)?;
    Ok(StepResult { next, reward, label_reward })
}

/// BCD environment step with the label reward.
pub fn env_step(p: &Problem, state: &EnvState, action: &DVector<f64>) -> Result<StepResult> {
    step(p, &EnvConfig::default(), state, action)
}

/// BCD environment step with the sum-rate reward; no label needed.
pub fn env_step_sumrate_reward(p: &Problem, state: &EnvState, action: &DVector<f64>) -> Result<StepResult> {
    step(p, &EnvConfig { reward: RewardKind::SumRate, ..EnvConfig::default() }, state, action)
}
