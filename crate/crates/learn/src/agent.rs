//! DDPG and TD3 agents.
//!
//! Critics see `[conv(G), state, action]` and output a scalar. The actor
//! has a linear head; the environment applies the sigmoid.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{LearnError, Result};
use crate::neural::{Activation, ConvSpec, Net, NetGrad, NetOptimizer};
use crate::replay::Transition;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Algorithm {
    Ddpg,
    Td3,
}

/// Distribution of the exploration term added to the policy output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NoiseKind {
    /// `U(0, c)` per coordinate.
    OneSided,
    /// `U(-c, c)` per coordinate.
    Symmetric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub algorithm: Algorithm,
    pub hidden: usize,
    /// Weight layers per network.
    pub depth: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub discount: f64,
    pub tau: f64,
    pub batch: usize,
    pub noise_bound: f64,
    pub noise: NoiseKind,
    /// Actor and target updates happen every `policy_delay` critic updates
    /// (TD3 only).
    pub policy_delay: usize,
    pub target_noise: f64,
    pub target_clip: f64,
    /// Initial scale of the actor's last layer; small values start the
    /// policy near zero output.
    pub actor_head_scale: f64,
    /// Standardize network inputs with running statistics.
    pub normalize: bool,
    pub conv: Option<ConvSpec>,
    pub seed: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Td3,
            hidden: 128,
            depth: 5,
            actor_lr: 1e-6,
            critic_lr: 1e-6,
            discount: 0.99,
            tau: 0.005,
            batch: 20,
            noise_bound: 1e-3,
            noise: NoiseKind::OneSided,
            policy_delay: 2,
            target_noise: 0.2,
            target_clip: 0.5,
            actor_head_scale: 1.0,
            normalize: true,
            conv: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub config: AgentConfig,
    pub links: usize,
    pub state_width: usize,
    pub actor: Net,
    pub actor_target: Net,
    /// One critic for DDPG, two for TD3.
    pub critics: Vec<Net>,
    pub critic_targets: Vec<Net>,
    actor_opt: NetOptimizer,
    critic_opts: Vec<NetOptimizer>,
    /// Critic updates performed so far.
    pub updates: u64,
    pub normalizer: Normalizer,
}

/// Running per-feature standardization of network inputs. Inactive until
/// [`Agent::observe`] has seen two states, and always inactive when the
/// config disables it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub enabled: bool,
    pub count: u64,
    pub mean: Vec<f64>,
    m2: Vec<f64>,
}

/// Standardized inputs are clipped to this magnitude.
pub const NORMALIZED_CLIP: f64 = 10.0;

impl Normalizer {
    pub fn new(width: usize, enabled: bool) -> Self {
        Self { enabled, count: 0, mean: vec![0.0; width], m2: vec![0.0; width] }
    }

    /// Welford update.
    pub fn observe(&mut self, x: &[f64]) {
        if !self.enabled {
            return;
        }
        self.count += 1;
        let n = self.count as f64;
        for ((m, m2), x) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let d = x - *m;
            *m += d / n;
            *m2 += d * (x - *m);
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        if !self.enabled || self.count < 2 {
            return x.to_vec();
        }
        let n = self.count as f64;
        x.iter()
            .zip(self.mean.iter().zip(&self.m2))
            .map(|(x, (m, m2))| ((x - m) / (m2 / n + 1e-8).sqrt()).clamp(-NORMALIZED_CLIP, NORMALIZED_CLIP))
            .collect()
    }
}

/// Loss values of one update; `actor` is `None` when the actor was skipped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub actor_objective: Option<f64>,
}

const CHECKPOINT_FORMAT: &str = "wsrm-agent";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    agent: Agent,
}

type Batch<'a> = [&'a Transition];

fn gains_of(t: &Transition) -> Option<&DMatrix<f64>> {
    t.gains.as_deref()
}

impl Agent {
    pub fn new(config: AgentConfig, links: usize, state_width: usize) -> Result<Self> {
        if config.batch == 0 || config.policy_delay == 0 || config.depth == 0 {
            return Err(LearnError::InvalidSpec("batch, policy delay and depth must be positive".into()));
        }
        let seed = config.seed;
        let normalize = config.normalize;
        let mut actor =
            Net::new(config.conv, links, state_width, config.hidden, config.depth, links, Activation::Identity, seed)?;
        actor.scale_head(config.actor_head_scale);
        let twins = match config.algorithm {
            Algorithm::Ddpg => 1,
            Algorithm::Td3 => 2,
        };
        let critics = (0..twins)
            .map(|k| {
                Net::new(
                    config.conv,
                    links,
                    state_width + links,
                    config.hidden,
                    config.depth,
                    1,
                    Activation::Identity,
                    seed.wrapping_add(1 + k as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            actor_opt: NetOptimizer::new(&actor, config.actor_lr),
            critic_opts: critics.iter().map(|c| NetOptimizer::new(c, config.critic_lr)).collect(),
            actor_target: actor.clone(),
            critic_targets: critics.clone(),
            actor,
            critics,
            config,
            links,
            state_width,
            updates: 0,
            normalizer: Normalizer::new(state_width, normalize),
        })
    }

    /// Feeds a visited state to the input statistics.
    pub fn observe(&mut self, state: &[f64]) {
        self.normalizer.observe(state);
    }

    /// Noise-free policy output.
    pub fn policy(&self, gains: Option<&DMatrix<f64>>, state: &[f64]) -> Result<Vec<f64>> {
        self.actor.predict(gains, &self.normalizer.apply(state), &[])
    }

    /// Policy output plus exploration noise with bound `c`.
    pub fn act(&self, gains: Option<&DMatrix<f64>>, state: &[f64], c: f64, rng: &mut impl Rng) -> Result<Vec<f64>> {
        let mut a = self.policy(gains, state)?;
        if c > 0.0 {
            for x in &mut a {
                *x += match self.config.noise {
                    NoiseKind::OneSided => rng.random_range(0.0..c),
                    NoiseKind::Symmetric => rng.random_range(-c..c),
                };
            }
        }
        Ok(a)
    }

    pub fn q_value(&self, k: usize, gains: Option<&DMatrix<f64>>, state: &[f64], action: &[f64]) -> Result<f64> {
        Ok(self.critics[k].predict(gains, state, action)?[0])
    }

    /// Bellman targets `r + beta (1 - done) min_k q_k'(s', mu'(s') + eps)`.
    pub fn critic_targets(&self, batch: &Batch, rng: &mut impl Rng) -> Result<Vec<f64>> {
        let smoothing = match self.config.algorithm {
            Algorithm::Td3 if self.config.target_noise > 0.0 && self.config.target_clip > 0.0 => {
                Some(Normal::new(0.0, self.config.target_noise).map_err(|e| LearnError::InvalidSpec(e.to_string()))?)
            }
            _ => None,
        };
        batch
            .iter()
            .map(|t| {
                let g = gains_of(t);
                let s2 = self.normalizer.apply(&t.next_state);
                let mut a2 = self.actor_target.predict(g, &s2, &[])?;
                if let Some(d) = &smoothing {
                    let clip = self.config.target_clip;
                    a2.iter_mut().for_each(|x| *x += d.sample(rng).clamp(-clip, clip));
                }
                let q = self
                    .critic_targets
                    .iter()
                    .map(|c| c.predict(g, &s2, &a2).map(|v| v[0]))
                    .collect::<Result<Vec<_>>>()?
                    .into_iter()
                    .fold(f64::INFINITY, f64::min);
                let cont = if t.done { 0.0 } else { 1.0 };
                Ok(t.reward + self.config.discount * cont * q)
            })
            .collect()
    }

    /// Mean squared TD error of critic `k` against `targets`.
    pub fn critic_loss(&self, k: usize, batch: &Batch, targets: &[f64]) -> Result<f64> {
        let mut loss = 0.0;
        for (t, y) in batch.iter().zip(targets) {
            let q = self.critics[k].predict(gains_of(t), &self.normalizer.apply(&t.state), &t.action)?[0];
            loss += (q - y) * (q - y);
        }
        Ok(loss / batch.len() as f64)
    }

    pub fn critic_loss_grad(&self, k: usize, batch: &Batch, targets: &[f64]) -> Result<NetGrad> {
        let critic = &self.critics[k];
        let mut grad = critic.zero_grad();
        let n = batch.len() as f64;
        for (t, y) in batch.iter().zip(targets) {
            let g = gains_of(t);
            let (q, cache) = critic.forward(g, &self.normalizer.apply(&t.state), &t.action)?;
            critic.backward_into(g, &cache, &[2.0 * (q[0] - y) / n], &mut grad)?;
        }
        Ok(grad)
    }

    /// `mean q_1(s, mu(s))`, the quantity the actor ascends.
    pub fn actor_objective(&self, batch: &Batch) -> Result<f64> {
        let mut total = 0.0;
        for t in batch {
            let g = gains_of(t);
            let st = self.normalizer.apply(&t.state);
            let a = self.actor.predict(g, &st, &[])?;
            total += self.critics[0].predict(g, &st, &a)?[0];
        }
        Ok(total / batch.len() as f64)
    }

    /// Gradient of [`Agent::actor_objective`] with respect to the actor.
    pub fn actor_objective_grad(&self, batch: &Batch) -> Result<NetGrad> {
        let critic = &self.critics[0];
        let mut grad = self.actor.zero_grad();
        let mut scratch = critic.zero_grad();
        let n = batch.len() as f64;
        let sw = self.state_width;
        for t in batch {
            let g = gains_of(t);
            let st = self.normalizer.apply(&t.state);
            let (a, a_cache) = self.actor.forward(g, &st, &[])?;
            let (_, q_cache) = critic.forward(g, &st, &a)?;
            let dq = critic.backward_into(g, &q_cache, &[1.0 / n], &mut scratch)?;
            self.actor.backward_into(g, &a_cache, &dq[sw..], &mut grad)?;
        }
        Ok(grad)
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        if batch.is_empty() {
            return Err(LearnError::BufferUnderflow { have: 0, need: 1 });
        }
        for t in batch {
            if t.state.len() != self.state_width || t.next_state.len() != self.state_width {
                return Err(LearnError::ShapeMismatch { expected: self.state_width, found: t.state.len() });
            }
            if t.action.len() != self.links {
                return Err(LearnError::ShapeMismatch { expected: self.links, found: t.action.len() });
            }
        }
        Ok(())
    }

    fn step_critics(&mut self, batch: &Batch, rng: &mut impl Rng) -> Result<f64> {
        let targets = self.critic_targets(batch, rng)?;
        let mut loss = 0.0;
        for k in 0..self.critics.len() {
            loss += self.critic_loss(k, batch, &targets)?;
            let grad = self.critic_loss_grad(k, batch, &targets)?;
            self.critic_opts[k].step(&mut self.critics[k], &grad)?;
        }
        self.updates += 1;
        Ok(loss / self.critics.len() as f64)
    }

    fn step_actor(&mut self, batch: &Batch) -> Result<f64> {
        let objective = self.actor_objective(batch)?;
        let mut grad = self.actor_objective_grad(batch)?;
        // Adam minimizes; the actor ascends.
        grad.scale(-1.0);
        self.actor_opt.step(&mut self.actor, &grad)?;
        Ok(objective)
    }

    fn soft_update_targets(&mut self) {
        let tau = self.config.tau;
        self.actor_target.soft_update_from(&self.actor, tau);
        for (t, o) in self.critic_targets.iter_mut().zip(&self.critics) {
            t.soft_update_from(o, tau);
        }
    }

    /// Critic step, actor step, then soft target update.
    pub fn ddpg_update(&mut self, batch: &Batch, rng: &mut impl Rng) -> Result<UpdateStats> {
        self.check_batch(batch)?;
        let critic_loss = self.step_critics(batch, rng)?;
        let objective = self.step_actor(batch)?;
        self.soft_update_targets();
        Ok(UpdateStats { critic_loss, actor_objective: Some(objective) })
    }

    /// Twin-critic step every call; actor and targets every
    /// `policy_delay` calls.
    pub fn td3_update(&mut self, batch: &Batch, rng: &mut impl Rng) -> Result<UpdateStats> {
        if self.critics.len() < 2 {
            return Err(LearnError::InvalidSpec("TD3 update needs twin critics".into()));
        }
        self.check_batch(batch)?;
        let critic_loss = self.step_critics(batch, rng)?;
        let actor_objective = if self.updates % self.config.policy_delay as u64 == 0 {
            let o = self.step_actor(batch)?;
            self.soft_update_targets();
            Some(o)
        } else {
            None
        };
        Ok(UpdateStats { critic_loss, actor_objective })
    }

    pub fn update(&mut self, batch: &Batch, rng: &mut impl Rng) -> Result<UpdateStats> {
        match self.config.algorithm {
            Algorithm::Ddpg => self.ddpg_update(batch, rng),
            Algorithm::Td3 => self.td3_update(batch, rng),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let c = Checkpoint { format: CHECKPOINT_FORMAT.into(), version: CHECKPOINT_VERSION, agent: self.clone() };
        serde_json::to_string(&c).map_err(|e| LearnError::Checkpoint(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(s).map_err(|e| LearnError::Checkpoint(e.to_string()))?;
        if c.format != CHECKPOINT_FORMAT || c.version != CHECKPOINT_VERSION {
            return Err(LearnError::Checkpoint(format!("unsupported checkpoint {} v{}", c.format, c.version)));
        }
        let a = c.agent;
        let sizes_match = a.actor.mlp.params().len() == a.actor_target.mlp.params().len()
            && a.critics.len() == a.critic_targets.len()
            && a.critics.len() == a.critic_opts.len();
        if !sizes_match {
            return Err(LearnError::Checkpoint("target shapes do not mirror online shapes".into()));
        }
        Ok(a)
    }
}
