//! Training defaults used by the CLI and the acceptance suite.
//!
//! The library defaults follow the published hyperparameters. At the desk
//! budget (a few thousand environment steps on one core) they learn
//! slowly, so the CLI starts from a larger learning rate, a shorter
//! horizon, a smaller discount and wider symmetric exploration, with two
//! updates per step, and emits the best visited state rather than the
//! last one.

use wsrm_learn::agent::{Algorithm, NoiseKind};
use wsrm_learn::train::{self, Emit, TrainConfig};

use crate::commands::agent_shape;
use crate::config::{AgentKind, Preset};

pub const DESK_LEARNING_RATE: f64 = 1e-3;
pub const DESK_HORIZON: usize = 5;
pub const DESK_DISCOUNT: f64 = 0.8;
pub const DESK_NOISE_BOUND: f64 = 1.0;
pub const DESK_UPDATES_PER_STEP: usize = 2;
/// The power-space baselines take small steps and get the library horizon.
pub const BASELINE_HORIZON: usize = 50;

/// Library defaults shaped for `kind`.
pub fn paper_config(kind: AgentKind) -> TrainConfig {
    let base = TrainConfig::default();
    let (env_kind, algorithm) = agent_shape(kind);
    let mut c = match kind {
        AgentKind::PureDdpg => train::pure_ddpg_config(&base),
        AgentKind::PureTd3 => train::pure_td3_config(&base),
        _ => base,
    };
    if algorithm == Algorithm::Ddpg {
        c.steps = 4500;
        c.buffer_capacity = 5000;
    }
    c.env.kind = env_kind;
    c.agent.algorithm = algorithm;
    c
}

pub fn preset_config(preset: Preset, kind: AgentKind) -> TrainConfig {
    match preset {
        Preset::Desk => desk_config(kind),
        Preset::Paper => paper_config(kind),
    }
}

pub fn desk_config(kind: AgentKind) -> TrainConfig {
    let mut base = TrainConfig::default();
    base.env.horizon = DESK_HORIZON;
    base.agent.actor_lr = DESK_LEARNING_RATE;
    base.agent.critic_lr = DESK_LEARNING_RATE;
    base.agent.discount = DESK_DISCOUNT;
    base.agent.noise = NoiseKind::Symmetric;
    base.agent.noise_bound = DESK_NOISE_BOUND;
    base.updates_per_step = DESK_UPDATES_PER_STEP;
    base.emit = Emit::BestRate;
    let (env_kind, algorithm) = agent_shape(kind);
    let mut c = match kind {
        AgentKind::PureDdpg => train::pure_ddpg_config(&base),
        AgentKind::PureTd3 => train::pure_td3_config(&base),
        _ => base,
    };
    if algorithm == Algorithm::Ddpg {
        // the DDPG column of the published table
        c.steps = 4500;
        c.buffer_capacity = 5000;
    }
    if env_kind != wsrm_learn::env::EnvKind::Bcd {
        c.env.horizon = BASELINE_HORIZON;
    }
    c.env.kind = env_kind;
    c.agent.algorithm = algorithm;
    c
}
