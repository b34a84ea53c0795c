//! Helpers shared by the integration tests. Everything here is computed
//! independently of the library code under test.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wsrm_core::WsrmInstance;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random instance with every gain positive, so `F` is irreducible.
pub fn random_instance(rng: &mut impl Rng, l: usize) -> WsrmInstance {
    let g = DMatrix::from_fn(l, l, |r, c| {
        if r == c {
            rng.random_range(0.5..3.0)
        } else {
            rng.random_range(0.01..1.0)
        }
    });
    let n = DVector::from_fn(l, |_, _| rng.random_range(0.01..0.5));
    let mut w = DVector::from_fn(l, |_, _| rng.random_range(0.2..1.0));
    w /= w.sum();
    let m = DVector::from_fn(l, |_, _| rng.random_range(0.5..2.0));
    let budget = rng.random_range(0.5..5.0);
    WsrmInstance::new(g, n, w, m, budget).unwrap()
}

/// Spectral radius from a dense general eigenvalue solve.
pub fn dense_radius(m: &DMatrix<f64>) -> f64 {
    m.clone().complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// SINR evaluated term by term.
pub fn direct_sinr(g: &DMatrix<f64>, n: &DVector<f64>, p: &DVector<f64>, l: usize) -> f64 {
    let mut den = n[l];
    for j in 0..p.len() {
        if j != l {
            den += g[(l, j)] * p[j];
        }
    }
    g[(l, l)] * p[l] / den
}

pub fn direct_rate(inst: &WsrmInstance, p: &DVector<f64>) -> f64 {
    (0..inst.links())
        .map(|l| inst.weights()[l] * (1.0 + direct_sinr(inst.gains(), inst.noise(), p, l)).ln())
        .sum()
}

/// Water-filling for `max sum w_l log(1 + a_l p_l)` s.t. `m^T p = P`, by
/// bisection on the water level `mu`: `p_l = max(0, w_l / (mu m_l) - 1/a_l)`.
pub fn water_filling(a: &[f64], w: &[f64], m: &[f64], budget: f64) -> Vec<f64> {
    let alloc = |mu: f64| -> Vec<f64> {
        (0..a.len()).map(|l| (w[l] / (mu * m[l]) - 1.0 / a[l]).max(0.0)).collect()
    };
    let used = |p: &[f64]| -> f64 { p.iter().zip(m).map(|(p, m)| p * m).sum() };
    let (mut lo, mut hi) = (1e-12f64, 1e12f64);
    for _ in 0..400 {
        let mid = (lo * hi).sqrt();
        if used(&alloc(mid)) > budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    alloc(0.5 * (lo + hi))
}
