//! Seeded instance generators.
//!
//! Instance `i` of a dataset draws from its own ChaCha stream, so a dataset
//! is identical whether it is generated sequentially or in parallel, and
//! instance `i` does not depend on the dataset size.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::beamforming::BeamformingInstance;
use crate::error::{Result, WsrmError};
use crate::par::{self, Exec};
use crate::problem::{self, WsrmInstance};

/// How the gain matrix is drawn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GainModel {
    /// `G_lj = |h|^2` with `h` standard circular complex Gaussian.
    Rayleigh,
    /// `G_lj` uniform on `[lo, hi)`.
    Uniform { lo: f64, hi: f64 },
    /// Gains seen through fixed beamformers: random complex channels
    /// `H_l` (`rx x tx`), a random unit transmit beamformer per link and the
    /// matched receive beamformer `v_l = H_l u_l / |H_l u_l|`.
    Precoder { tx: usize, rx: usize },
}

impl Default for GainModel {
    fn default() -> Self {
        GainModel::Precoder { tx: 3, rx: 2 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    pub links: usize,
    pub model: GainModel,
    /// Noise power drawn uniformly from this range (equal ends fix it).
    pub noise: (f64, f64),
    /// Budget drawn uniformly from this range.
    pub budget: (f64, f64),
    /// Draw `w_l ~ U(0.5, 1.5)` and normalize; otherwise uniform weights.
    pub random_weights: bool,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            links: 3,
            model: GainModel::default(),
            noise: (0.01, 0.1),
            budget: (1.0, 3.0),
            random_weights: true,
        }
    }
}

/// Generator for item `index` of the dataset seeded by `seed`.
pub fn item_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Standard circular complex Gaussian, `E|h|^2 = 1`.
pub fn complex_gaussian(rng: &mut impl Rng) -> Complex64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

pub fn complex_gaussian_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> DMatrix<Complex64> {
    DMatrix::from_fn(rows, cols, |_, _| complex_gaussian(rng))
}

/// Uniformly distributed unit vector in `C^n`.
pub fn random_unit(rng: &mut impl Rng, n: usize) -> DVector<Complex64> {
    let v = DVector::from_fn(n, |_, _| complex_gaussian(rng));
    let norm = v.norm();
    v / Complex64::from(norm)
}

fn draw_gains(rng: &mut impl Rng, l: usize, model: GainModel) -> DMatrix<f64> {
    match model {
        GainModel::Rayleigh => DMatrix::from_fn(l, l, |_, _| complex_gaussian(rng).norm_sqr()),
        GainModel::Uniform { lo, hi } => DMatrix::from_fn(l, l, |_, _| uniform(rng, (lo, hi))),
        GainModel::Precoder { tx, rx } => {
            let h: Vec<_> = (0..l).map(|_| complex_gaussian_matrix(rng, rx, tx)).collect();
            let u: Vec<_> = (0..l).map(|_| random_unit(rng, tx)).collect();
            let mut g = DMatrix::zeros(l, l);
            for r in 0..l {
                let hu = &h[r] * &u[r];
                let v = &hu / Complex64::from(hu.norm());
                for c in 0..l {
                    g[(r, c)] = v.dotc(&(&h[r] * &u[c])).norm_sqr();
                }
            }
            g
        }
    }
}

fn draw_weights(rng: &mut impl Rng, l: usize, random: bool) -> DVector<f64> {
    let mut w = if random {
        DVector::from_fn(l, |_, _| rng.random_range(0.5..1.5))
    } else {
        DVector::from_element(l, 1.0)
    };
    let s = w.sum();
    w /= s;
    w
}

const MAX_REDRAWS: usize = 100;

/// Instance `index` of the dataset seeded by `seed`. Draws whose interference
/// pattern is reducible (probability zero under the continuous models) are
/// redrawn from the same stream.
pub fn generate_instance(config: &GenConfig, seed: u64, index: u64) -> Result<WsrmInstance> {
    if config.links == 0 {
        return Err(WsrmError::InvalidInstance("links must be at least 1".into()));
    }
    if let GainModel::Precoder { tx, rx } = config.model {
        if tx == 0 || rx == 0 {
            return Err(WsrmError::InvalidInstance("antenna counts must be positive".into()));
        }
    }
    let l = config.links;
    let mut rng = item_rng(seed, index);
    let mut last = None;
    for _ in 0..MAX_REDRAWS {
        let g = draw_gains(&mut rng, l, config.model);
        let n = DVector::from_fn(l, |_, _| uniform(&mut rng, config.noise));
        let w = draw_weights(&mut rng, l, config.random_weights);
        let m = DVector::from_element(l, 1.0);
        let budget = uniform(&mut rng, config.budget);
        let attempt = WsrmInstance::new(g, n, w, m, budget)
            .and_then(|inst| problem::build_operators(&inst).map(|_| inst));
        match attempt {
            Ok(inst) => return Ok(inst),
            Err(e) => last = Some(e),
        }
    }
    Err(last.expect("at least one draw"))
}

pub fn generate_dataset(config: &GenConfig, count: usize, seed: u64, exec: Exec) -> Result<Vec<WsrmInstance>> {
    par::map_indices(exec, count, |i| generate_instance(config, seed, i as u64)).into_iter().collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamGenConfig {
    pub links: usize,
    pub tx_antennas: usize,
    pub rx_antennas: usize,
    pub noise: (f64, f64),
    pub budget: (f64, f64),
    pub random_weights: bool,
}

impl Default for BeamGenConfig {
    fn default() -> Self {
        Self { links: 4, tx_antennas: 4, rx_antennas: 2, noise: (0.1, 0.1), budget: (4.0, 4.0), random_weights: true }
    }
}

/// Beamforming instance with i.i.d. standard complex Gaussian channels.
pub fn generate_beamforming(config: &BeamGenConfig, seed: u64, index: u64) -> Result<BeamformingInstance> {
    let l = config.links;
    let mut rng = item_rng(seed, index);
    let h = (0..l).map(|_| complex_gaussian_matrix(&mut rng, config.rx_antennas, config.tx_antennas)).collect();
    let n = DVector::from_fn(l, |_, _| uniform(&mut rng, config.noise));
    let w = draw_weights(&mut rng, l, config.random_weights);
    let m = DVector::from_element(l, 1.0);
    let budget = uniform(&mut rng, config.budget);
    BeamformingInstance::new(h, n, w, m, budget)
}

pub fn generate_beamforming_dataset(
    config: &BeamGenConfig,
    count: usize,
    seed: u64,
    exec: Exec,
) -> Result<Vec<BeamformingInstance>> {
    par::map_indices(exec, count, |i| generate_beamforming(config, seed, i as u64)).into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_order_free() {
        let cfg = GenConfig::default();
        let a = generate_dataset(&cfg, 8, 7, Exec::Sequential).unwrap();
        let b = generate_dataset(&cfg, 8, 7, Exec::Parallel).unwrap();
        assert_eq!(a, b);
        assert_eq!(generate_instance(&cfg, 7, 5).unwrap(), a[5]);
        assert_ne!(generate_dataset(&cfg, 8, 8, Exec::Sequential).unwrap(), a);
    }

    #[test]
    fn empty_dataset() {
        assert!(generate_dataset(&GenConfig::default(), 0, 1, Exec::Parallel).unwrap().is_empty());
    }

    #[test]
    fn every_model_yields_valid_instances() {
        for model in [GainModel::Rayleigh, GainModel::Uniform { lo: 0.1, hi: 1.0 }, GainModel::default()] {
            let cfg = GenConfig { links: 5, model, ..GenConfig::default() };
            for inst in generate_dataset(&cfg, 20, 3, Exec::Sequential).unwrap() {
                assert!(problem::build_operators(&inst).is_ok());
                assert!((inst.weights().sum() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn random_unit_has_unit_norm() {
        let mut rng = item_rng(1, 0);
        for n in 1..6 {
            assert!((random_unit(&mut rng, n).norm() - 1.0).abs() < 1e-14);
        }
    }
}
