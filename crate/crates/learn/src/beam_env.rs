//! Environment for the beamforming extension.
//!
//! One step maps the action to `y2`, runs a fixed-point pass on the dual
//! network, updates the transmit beamformers, runs a pass on the primal
//! network and updates the receive beamformers. The state carries both
//! rate vectors and the beamformers themselves.

use nalgebra::DVector;
use rand::Rng;
use wsrm_core::bcd::{self, START_RANGE};
use wsrm_core::beamforming::{self, lockstep_round, RoundOptions};
use wsrm_core::pf::KrauseOptions;
use wsrm_core::problem;
use wsrm_core::{BeamformerPair, BeamformingInstance};

use crate::env::{label_reward, RateFeature, FEATURE_CLIP};
use crate::error::{LearnError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct BeamState {
    pub pair: BeamformerPair,
    pub gamma_tilde: DVector<f64>,
    pub dual_gamma_tilde: DVector<f64>,
    pub power: DVector<f64>,
    pub features: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamStep {
    pub next: BeamState,
    pub reward: f64,
}

/// `7L + 1 + 2NL + 2 sum(N_l)`.
pub fn beam_state_width(binst: &BeamformingInstance) -> usize {
    let l = binst.links();
    let rx: usize = binst.channels().iter().map(|h| h.nrows()).sum();
    7 * l + 1 + 2 * binst.tx_antennas() * l + 2 * rx
}

/// Feature order: `sigma, w, P, gt, gt', p, Fp + sigma, rate feature`,
/// then real and imaginary parts of every `u_l`, then of every `v_l`.
pub fn beam_features(
    binst: &BeamformingInstance,
    pair: &BeamformerPair,
    gamma_tilde: &DVector<f64>,
    dual_gamma_tilde: &DVector<f64>,
    power: &DVector<f64>,
    rate_feature: RateFeature,
) -> Result<Vec<f64>> {
    let primal = binst.primal_instance(pair)?;
    let ops = problem::build_operators(&primal)?;
    let w = binst.weights();
    let clip = |x: &f64| x.clamp(-FEATURE_CLIP, FEATURE_CLIP);
    let load = &ops.interference * power + &ops.normalized_noise;
    let mut f = Vec::with_capacity(beam_state_width(binst));
    f.extend(ops.normalized_noise.iter());
    f.extend(w.iter());
    f.push(binst.budget());
    f.extend(gamma_tilde.iter().map(clip));
    f.extend(dual_gamma_tilde.iter().map(clip));
    f.extend(power.iter());
    f.extend(load.iter());
    f.extend((0..w.len()).map(|i| match rate_feature {
        RateFeature::InverseSinr => w[i] / (1.0 + gamma_tilde[i].exp()),
        RateFeature::LogRate => w[i] * problem::softplus(gamma_tilde[i]),
    }));
    for b in pair.u.iter().chain(&pair.v) {
        for z in b.iter() {
            f.push(z.re);
            f.push(z.im);
        }
    }
    Ok(f)
}

/// Starts from the suboptimal precoder with a random `y2`.
pub fn beam_reset(binst: &BeamformingInstance, rate_feature: RateFeature, rng: &mut impl Rng) -> Result<BeamState> {
    let pair = beamforming::suboptimal_precoder(binst)?;
    let y2 = DVector::from_fn(binst.links(), |_, _| rng.random_range(START_RANGE.0..START_RANGE.1));
    let primal = binst.primal_instance(&pair)?;
    let ops = problem::build_operators(&primal)?;
    let (gt, _) = bcd::solve_gamma_block(&ops.extended, binst.weights(), &y2, KrauseOptions::default())?;
    let dual = beamforming::dual_instance(&primal)?;
    let dual_ops = problem::build_operators(&dual)?;
    let (dgt, _) = bcd::solve_gamma_block(&dual_ops.extended, binst.weights(), &y2, KrauseOptions::default())?;
    let power = problem::power_from_gamma(&ops, &gt.map(f64::exp))?;
    let features = beam_features(binst, &pair, &gt, &dgt, &power, rate_feature)?;
    Ok(BeamState { pair, gamma_tilde: gt, dual_gamma_tilde: dgt, power, features })
}

/// One step of the beamforming environment with the label reward.
pub fn drl_beamforming_env_step(
    binst: &BeamformingInstance,
    state: &BeamState,
    action: &DVector<f64>,
    options: RoundOptions,
    rate_feature: RateFeature,
) -> Result<BeamStep> {
    let l = binst.links();
    if action.len() != l {
        return Err(LearnError::ShapeMismatch { expected: l, found: action.len() });
    }
    let label = binst.label.as_ref().ok_or(LearnError::MissingLabel(0))?;
    let y2 = bcd::update_y(action);
    let round = lockstep_round(binst, &state.pair, &y2, options, KrauseOptions::default())?;
    let reward = label_reward(binst.weights(), &round.gamma_tilde, &label.gamma_star);
    let features =
        beam_features(binst, &round.pair, &round.gamma_tilde, &round.dual_gamma_tilde, &round.power, rate_feature)?;
    Ok(BeamStep {
        next: BeamState {
            pair: round.pair,
            gamma_tilde: round.gamma_tilde,
            dual_gamma_tilde: round.dual_gamma_tilde,
            power: round.power,
            features,
        },
        reward,
    })
}
