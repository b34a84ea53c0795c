//! Perron-Frobenius utilities.
//!
//! * [`spectral_radius`] for nonnegative matrices.
//! * [`krause_iterate`], the concave fixed-point map whose limit `z` solves
//!   the linear-objective subproblem `max sum_l v_l gt_l s.t.
//!   rho(diag(e^gt) B) <= 1` through [`gamma_from_z`].
//!
//! At the fixed point `z_l * sum_i v_i B_il / (Bz)_i = v_l` for every `l`,
//! which is the stationarity condition of that subproblem (the right
//! Perron vector of `diag(e^gt) B` is `z`, the left one is `v / z`).

use nalgebra::{DMatrix, DVector};
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;

use crate::error::{Result, WsrmError};

/// Smallest normalized weight fed to the fixed-point map. Links whose weight
/// would fall below this are effectively switched off; the floor keeps `z`
/// and the resulting log-SINR finite.
pub const WEIGHT_FLOOR: f64 = 1e-30;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KrauseOptions {
    /// Stop when the max relative violation of the fixed-point condition is
    /// at or below this.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for KrauseOptions {
    fn default() -> Self {
        Self { tolerance: 1e-10, max_iterations: 10_000 }
    }
}

/// Output of [`krause_iterate`].
#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointReport {
    /// Normalized so that `sum(z) = 1`.
    pub z: DVector<f64>,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
    /// Residual before each update, starting at the initial point.
    pub residual_history: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralRadius {
    pub value: f64,
    pub iterations: usize,
    /// False when some irreducible block hit the iteration cap.
    pub converged: bool,
}

const RADIUS_TOL: f64 = 1e-12;
const RADIUS_MAX_ITER: usize = 100_000;

fn check_nonnegative(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(WsrmError::Dimension(format!("matrix is {}x{}", m.nrows(), m.ncols())));
    }
    for c in 0..m.ncols() {
        for r in 0..m.nrows() {
            let x = m[(r, c)];
            if !(x.is_finite() && x >= 0.0) {
                return Err(WsrmError::NotNonnegative { row: r, col: c });
            }
        }
    }
    Ok(())
}

/// Perron root of a nonnegative square matrix.
pub fn spectral_radius(m: &DMatrix<f64>) -> Result<f64> {
    spectral_radius_report(m).map(|r| r.value)
}

/// Like [`spectral_radius`], also reporting iterations and convergence.
///
/// The support graph is split into strongly connected components; the
/// radius is the maximum over the irreducible diagonal blocks, each found by
/// power iteration on `block + alpha I` (primitive, so the iteration cannot
/// cycle) stopped on the Collatz-Wielandt bracket.
pub fn spectral_radius_report(m: &DMatrix<f64>) -> Result<SpectralRadius> {
    check_nonnegative(m)?;
    let n = m.nrows();
    if n == 0 {
        return Ok(SpectralRadius { value: 0.0, iterations: 0, converged: true });
    }
    if crate::problem::strongly_connected(m).is_ok() {
        return Ok(irreducible_radius(m));
    }
    let mut graph = DiGraph::<(), ()>::with_capacity(n, n * n);
    let nodes: Vec<_> = (0..n).map(|_| graph.add_node(())).collect();
    for r in 0..n {
        for c in 0..n {
            if r != c && m[(r, c)] > 0.0 {
                graph.add_edge(nodes[r], nodes[c], ());
            }
        }
    }
    let mut best = SpectralRadius { value: 0.0, iterations: 0, converged: true };
    for component in tarjan_scc(&graph) {
        let idx: Vec<usize> = component.iter().map(|n| n.index()).collect();
        let block = DMatrix::from_fn(idx.len(), idx.len(), |r, c| m[(idx[r], idx[c])]);
        let part = if idx.len() == 1 {
            SpectralRadius { value: block[(0, 0)], iterations: 0, converged: true }
        } else {
            irreducible_radius(&block)
        };
        best.iterations += part.iterations;
        best.converged &= part.converged;
        best.value = best.value.max(part.value);
    }
    Ok(best)
}

fn irreducible_radius(m: &DMatrix<f64>) -> SpectralRadius {
    let n = m.nrows();
    if n == 1 {
        return SpectralRadius { value: m[(0, 0)], iterations: 0, converged: true };
    }
    let row_sums: Vec<f64> = (0..n).map(|r| m.row(r).sum()).collect();
    let lo_sum = row_sums.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi_sum = row_sums.iter().cloned().fold(0.0, f64::max);
    if lo_sum == hi_sum {
        return SpectralRadius { value: hi_sum, iterations: 0, converged: true };
    }
    // Collatz-Wielandt bracket from the ratios (Mx)_i / x_i; the shift keeps
    // the iteration primitive and is re-chosen from the bracket each round,
    // so one dominant row cannot stall convergence
    let mut x = DVector::from_element(n, 1.0 / n as f64);
    let mut y = DVector::zeros(n);
    let mut estimate = hi_sum;
    for it in 1..=RADIUS_MAX_ITER {
        m.mul_to(&x, &mut y);
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for i in 0..n {
            let ratio = y[i] / x[i];
            lo = lo.min(ratio);
            hi = hi.max(ratio);
        }
        estimate = 0.5 * (lo + hi);
        if hi - lo <= RADIUS_TOL * hi {
            return SpectralRadius { value: estimate, iterations: it, converged: true };
        }
        let alpha = (0.5 * lo).max(1e-3 * hi);
        y.axpy(alpha, &x, 1.0);
        let s = y.sum();
        x.copy_from(&y);
        x /= s;
    }
    SpectralRadius { value: estimate, iterations: RADIUS_MAX_ITER, converged: false }
}

/// Normalized fixed-point weights `v = w * y2 / sum(w * y2)`, floored at
/// [`WEIGHT_FLOOR`].
pub fn fixed_point_weights(w: &DVector<f64>, y2: &DVector<f64>) -> DVector<f64> {
    let mut v = w.component_mul(y2);
    let s = v.sum();
    v /= s;
    v.apply(|x| *x = x.max(WEIGHT_FLOOR));
    v
}

/// Runs the fixed-point map for weights `w * y2` from the uniform start.
pub fn krause_iterate(
    b: &DMatrix<f64>,
    w: &DVector<f64>,
    y2: &DVector<f64>,
) -> Result<FixedPointReport> {
    let l = b.nrows();
    if w.len() != l || y2.len() != l || b.ncols() != l {
        return Err(WsrmError::Dimension("B, w and y2 disagree in size".into()));
    }
    if y2.iter().any(|y| !(y.is_finite() && *y > 0.0)) {
        return Err(WsrmError::InvalidInstance("y2 must be positive".into()));
    }
    let v = fixed_point_weights(w, y2);
    let z0 = DVector::from_element(l, 1.0 / l as f64);
    krause_from(b, &v, z0, KrauseOptions::default())
}

/// Fixed-point map for already normalized weights `v` from start `z0`.
pub fn krause_from(
    b: &DMatrix<f64>,
    v: &DVector<f64>,
    z0: DVector<f64>,
    opts: KrauseOptions,
) -> Result<FixedPointReport> {
    let l = b.nrows();
    let mut z = z0;
    let s = z.sum();
    z /= s;
    let mut bz = DVector::zeros(l);
    let mut q = DVector::zeros(l);
    let mut den = DVector::zeros(l);
    let mut history = Vec::new();
    let mut best = f64::INFINITY;
    for k in 0..=opts.max_iterations {
        b.mul_to(&z, &mut bz);
        for i in 0..l {
            q[i] = v[i] / bz[i];
        }
        b.tr_mul_to(&q, &mut den);
        let mut residual = 0.0f64;
        for i in 0..l {
            residual = residual.max((z[i] * den[i] / v[i] - 1.0).abs());
        }
        history.push(residual);
        best = best.min(residual);
        if residual <= opts.tolerance {
            return Ok(FixedPointReport {
                z,
                iterations: k,
                residual,
                converged: true,
                residual_history: history,
            });
        }
        if k == opts.max_iterations {
            break;
        }
        for i in 0..l {
            z[i] = v[i] / den[i];
        }
        let s = z.sum();
        z /= s;
    }
    Err(WsrmError::NoConvergence { iterations: opts.max_iterations, residual: best })
}

/// `gt_l = log(z_l / (Bz)_l)`.
pub fn gamma_from_z(b: &DMatrix<f64>, z: &DVector<f64>) -> DVector<f64> {
    let bz = b * z;
    DVector::from_fn(z.len(), |i, _| (z[i] / bz[i]).ln())
}

/// `diag(d) M`.
pub fn scale_rows(d: &DVector<f64>, m: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |r, c| d[r] * m[(r, c)])
}
