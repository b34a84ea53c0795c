//! Problem data for downlink weighted sum-rate maximization under a total
//! power budget, plus the derived operators the solvers work with.
//!
//! All rates are in nats. Divide by `ln 2` for bits.

use nalgebra::{DMatrix, DVector};
use petgraph::graph::DiGraph;
use petgraph::visit::Bfs;

use crate::error::{Result, WsrmError};
use crate::pf;

/// Slack on `m^T p <= P` used by feasibility checks.
pub const BUDGET_SLACK: f64 = 1e-9;

/// `diag(gamma) F` must have spectral radius below `1 - FEASIBILITY_MARGIN`.
pub const FEASIBILITY_MARGIN: f64 = 1e-12;

/// Where a label came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OracleTag {
    Grid,
    Multistart,
    Analytic,
}

impl OracleTag {
    pub fn as_str(self) -> &'static str {
        match self {
            OracleTag::Grid => "grid",
            OracleTag::Multistart => "multistart",
            OracleTag::Analytic => "analytic",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "grid" => Some(OracleTag::Grid),
            "multistart" => Some(OracleTag::Multistart),
            "analytic" => Some(OracleTag::Analytic),
            _ => None,
        }
    }
}

/// Reference solution attached to an instance: the log-SINR vector of the
/// best known point and its weighted sum rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Label {
    pub gamma_star: DVector<f64>,
    pub rate_star: f64,
    pub oracle_tag: OracleTag,
}

/// One problem instance: gains `G`, noise `n`, rate weights `w`, power
/// weights `m` and budget `P`.
#[derive(Debug, Clone, PartialEq)]
pub struct WsrmInstance {
    gains: DMatrix<f64>,
    noise: DVector<f64>,
    weights: DVector<f64>,
    power_weights: DVector<f64>,
    budget: f64,
    pub label: Option<Label>,
}

fn check_positive(name: &str, v: &DVector<f64>) -> Result<()> {
    if let Some((i, x)) = v.iter().enumerate().find(|(_, x)| !(x.is_finite() && **x > 0.0)) {
        return Err(WsrmError::InvalidInstance(format!(
            "{name}[{i}] = {x} must be positive and finite"
        )));
    }
    Ok(())
}

impl WsrmInstance {
    /// Validates everything except irreducibility, which
    /// [`build_operators`] checks.
    pub fn new(
        gains: DMatrix<f64>,
        noise: DVector<f64>,
        weights: DVector<f64>,
        power_weights: DVector<f64>,
        budget: f64,
    ) -> Result<Self> {
        let l = gains.nrows();
        if l == 0 {
            return Err(WsrmError::InvalidInstance("no links".into()));
        }
        if gains.ncols() != l || noise.len() != l || weights.len() != l || power_weights.len() != l
        {
            return Err(WsrmError::Dimension(format!(
                "G is {}x{}, n/w/m have lengths {}/{}/{}",
                gains.nrows(),
                gains.ncols(),
                noise.len(),
                weights.len(),
                power_weights.len()
            )));
        }
        for r in 0..l {
            for c in 0..l {
                let g = gains[(r, c)];
                if !(g.is_finite() && g >= 0.0) {
                    return Err(WsrmError::NotNonnegative { row: r, col: c });
                }
            }
            if gains[(r, r)] <= 0.0 {
                return Err(WsrmError::ZeroDirectGain { link: r, value: gains[(r, r)] });
            }
        }
        check_positive("n", &noise)?;
        check_positive("w", &weights)?;
        check_positive("m", &power_weights)?;
        let wsum = weights.sum();
        if (wsum - 1.0).abs() > 1e-9 {
            return Err(WsrmError::InvalidInstance(format!("weights sum to {wsum}, expected 1")));
        }
        if !(budget.is_finite() && budget > 0.0) {
            return Err(WsrmError::InvalidInstance(format!("budget {budget} must be positive")));
        }
        Ok(Self { gains, noise, weights, power_weights, budget, label: None })
    }

    pub fn with_label(mut self, label: Label) -> Self {
        self.label = Some(label);
        self
    }

    pub fn links(&self) -> usize {
        self.gains.nrows()
    }

    pub fn gains(&self) -> &DMatrix<f64> {
        &self.gains
    }

    pub fn noise(&self) -> &DVector<f64> {
        &self.noise
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn power_weights(&self) -> &DVector<f64> {
        &self.power_weights
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    /// `m^T p <= P + BUDGET_SLACK` and `p >= 0`.
    pub fn is_feasible(&self, p: &DVector<f64>) -> bool {
        p.iter().all(|&x| x >= 0.0) && self.power_weights.dot(p) <= self.budget + BUDGET_SLACK
    }
}

/// `F` (normalized cross gains), `sigma = n / diag(G)` and the extended
/// matrix `B = F + sigma m^T / P`.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivedOperators {
    pub interference: DMatrix<f64>,
    pub normalized_noise: DVector<f64>,
    pub extended: DMatrix<f64>,
    pub power_weights: DVector<f64>,
    pub budget: f64,
}

impl DerivedOperators {
    pub fn links(&self) -> usize {
        self.interference.nrows()
    }
}

/// Checks that the support graph of `m` is strongly connected. Returns the
/// first unreachable (from, to) pair otherwise.
pub(crate) fn strongly_connected(m: &DMatrix<f64>) -> std::result::Result<(), (usize, usize)> {
    let l = m.nrows();
    if l <= 1 {
        return Ok(());
    }
    let mut fwd = DiGraph::<(), ()>::with_capacity(l, l * l);
    let mut rev = DiGraph::<(), ()>::with_capacity(l, l * l);
    let nodes: Vec<_> = (0..l).map(|_| fwd.add_node(())).collect();
    for _ in 0..l {
        rev.add_node(());
    }
    for r in 0..l {
        for c in 0..l {
            if r != c && m[(r, c)] > 0.0 {
                fwd.add_edge(nodes[r], nodes[c], ());
                rev.add_edge(nodes[c], nodes[r], ());
            }
        }
    }
    for (graph, forward) in [(&fwd, true), (&rev, false)] {
        let mut seen = vec![false; l];
        let mut bfs = Bfs::new(graph, nodes[0]);
        while let Some(n) = bfs.next(graph) {
            seen[n.index()] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(if forward { (0, missing) } else { (missing, 0) });
        }
    }
    Ok(())
}

/// Builds `F`, `sigma` and `B`, rejecting reducible interference patterns.
pub fn build_operators(inst: &WsrmInstance) -> Result<DerivedOperators> {
    let l = inst.links();
    let g = inst.gains();
    for i in 0..l {
        if g[(i, i)] <= 0.0 {
            return Err(WsrmError::ZeroDirectGain { link: i, value: g[(i, i)] });
        }
    }
    let interference =
        DMatrix::from_fn(l, l, |r, c| if r == c { 0.0 } else { g[(r, c)] / g[(r, r)] });
    if let Err((from, to)) = strongly_connected(&interference) {
        return Err(WsrmError::ReducibleInterference { from, to });
    }
    let normalized_noise = DVector::from_fn(l, |i, _| inst.noise()[i] / g[(i, i)]);
    let extended = &interference
        + (&normalized_noise * inst.power_weights().transpose()) / inst.budget();
    Ok(DerivedOperators {
        interference,
        normalized_noise,
        extended,
        power_weights: inst.power_weights().clone(),
        budget: inst.budget(),
    })
}

/// Per-link SINR at power vector `p`.
pub fn sinr(inst: &WsrmInstance, p: &DVector<f64>) -> DVector<f64> {
    sinr_with_gains(inst.gains(), inst.noise(), p)
}

pub(crate) fn sinr_with_gains(g: &DMatrix<f64>, noise: &DVector<f64>, p: &DVector<f64>) -> DVector<f64> {
    let l = g.nrows();
    DVector::from_fn(l, |i, _| {
        let mut interference = noise[i];
        for j in 0..l {
            if j != i {
                interference += g[(i, j)] * p[j];
            }
        }
        g[(i, i)] * p[i] / interference
    })
}

/// `sum_l w_l log(1 + SINR_l(p))` in nats.
pub fn sum_rate(inst: &WsrmInstance, p: &DVector<f64>) -> f64 {
    weighted_rate(inst.weights(), &sinr(inst, p))
}

/// `sum_l w_l log(1 + gamma_l)`.
pub fn weighted_rate(w: &DVector<f64>, gamma: &DVector<f64>) -> f64 {
    w.iter().zip(gamma.iter()).map(|(w, g)| w * g.ln_1p()).sum()
}

/// Same as [`weighted_rate`] for log-domain SINRs, without overflow for
/// large entries.
pub fn weighted_rate_log(w: &DVector<f64>, gamma_tilde: &DVector<f64>) -> f64 {
    w.iter().zip(gamma_tilde.iter()).map(|(w, g)| w * softplus(*g)).sum()
}

/// `log(1 + e^x)` evaluated without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Power vector achieving the SINR targets `gamma`:
/// `p = (I - diag(gamma) F)^{-1} diag(gamma) sigma`.
pub fn power_from_gamma(ops: &DerivedOperators, gamma: &DVector<f64>) -> Result<DVector<f64>> {
    let l = ops.links();
    if gamma.len() != l {
        return Err(WsrmError::Dimension(format!("gamma has length {}, expected {l}", gamma.len())));
    }
    if gamma.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
        return Err(WsrmError::InvalidInstance("gamma must be finite and nonnegative".into()));
    }
    let scaled = DMatrix::from_fn(l, l, |r, c| gamma[r] * ops.interference[(r, c)]);
    let radius = pf::spectral_radius(&scaled)?;
    if radius >= 1.0 - FEASIBILITY_MARGIN {
        return Err(WsrmError::InfeasibleGamma { radius });
    }
    let system = DMatrix::identity(l, l) - scaled;
    let rhs = gamma.component_mul(&ops.normalized_noise);
    let p = system
        .lu()
        .solve(&rhs)
        .ok_or(WsrmError::InfeasibleGamma { radius })?;
    // the inverse is entrywise nonnegative; clip rounding noise
    Ok(p.map(|x| x.max(0.0)))
}

/// A point described simultaneously in SINR, log-SINR and power terms.
#[derive(Debug, Clone, PartialEq)]
pub struct RatePoint {
    pub sinr: DVector<f64>,
    pub log_sinr: DVector<f64>,
    pub power: DVector<f64>,
    pub rate: f64,
}

impl RatePoint {
    pub fn from_power(inst: &WsrmInstance, p: DVector<f64>) -> Self {
        let s = sinr(inst, &p);
        let rate = weighted_rate(inst.weights(), &s);
        Self { log_sinr: s.map(f64::ln), sinr: s, power: p, rate }
    }

    pub fn from_log_sinr(
        inst: &WsrmInstance,
        ops: &DerivedOperators,
        gamma_tilde: DVector<f64>,
    ) -> Result<Self> {
        let s = gamma_tilde.map(f64::exp);
        let power = power_from_gamma(ops, &s)?;
        let rate = weighted_rate_log(inst.weights(), &gamma_tilde);
        Ok(Self { sinr: s, log_sinr: gamma_tilde, power, rate })
    }
}

/// Instance from the worked three-user example: `P = 2.5`, unit noise
/// `0.01`, weights `[0.33, 0.33, 0.34]`, unit power weights.
pub fn example_one() -> WsrmInstance {
    WsrmInstance::new(
        DMatrix::from_row_slice(3, 3, &[0.18, 0.05, 0.59, 0.61, 2.67, 0.56, 2.89, 0.99, 1.29]),
        DVector::from_element(3, 0.01),
        DVector::from_vec(vec![0.33, 0.33, 0.34]),
        DVector::from_element(3, 1.0),
        2.5,
    )
    .expect("embedded instance is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn example_one_operators() {
        let ops = build_operators(&example_one()).unwrap();
        // F row 1 = [0, 0.05/0.18, 0.59/0.18]
        assert_eq!(ops.interference[(0, 0)], 0.0);
        assert_relative_eq!(ops.interference[(0, 1)], 0.277778, epsilon = 1e-6);
        assert_relative_eq!(ops.interference[(0, 2)], 3.277778, epsilon = 1e-6);
        assert_relative_eq!(ops.normalized_noise[0], 0.0555556, epsilon = 1e-7);
        assert_relative_eq!(ops.normalized_noise[1], 0.00374532, epsilon = 1e-8);
        assert_relative_eq!(ops.normalized_noise[2], 0.00775194, epsilon = 1e-8);
        assert!(ops.extended.iter().all(|&b| b > 0.0));
    }

    #[test]
    fn diagonal_gains_are_reducible() {
        let inst = WsrmInstance::new(
            DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 3.0])),
            DVector::from_element(3, 0.1),
            DVector::from_element(3, 1.0 / 3.0),
            DVector::from_element(3, 1.0),
            1.0,
        )
        .unwrap();
        assert!(matches!(build_operators(&inst), Err(WsrmError::ReducibleInterference { .. })));
    }

    #[test]
    fn single_link_operators() {
        let inst = WsrmInstance::new(
            DMatrix::from_element(1, 1, 2.0),
            DVector::from_element(1, 0.5),
            DVector::from_element(1, 1.0),
            DVector::from_element(1, 1.0),
            4.0,
        )
        .unwrap();
        let ops = build_operators(&inst).unwrap();
        assert_eq!(ops.interference[(0, 0)], 0.0);
        assert_relative_eq!(ops.extended[(0, 0)], 0.5 / (2.0 * 4.0));
        let p = DVector::from_element(1, 4.0);
        assert_relative_eq!(sinr(&inst, &p)[0], 2.0 * 4.0 / 0.5);
        assert_relative_eq!(sum_rate(&inst, &p), (1.0f64 + 16.0).ln());
        let back = power_from_gamma(&ops, &DVector::from_element(1, 16.0)).unwrap();
        assert_relative_eq!(back[0], 4.0, max_relative = 1e-12);
    }

    #[test]
    fn example_one_sinr_and_rate() {
        let inst = example_one();
        let p = DVector::from_vec(vec![1.0, 1.0, 0.5]);
        let s = sinr(&inst, &p);
        assert_relative_eq!(s[0], 0.18 / (0.05 + 0.59 * 0.5 + 0.01), epsilon = 1e-12);
        assert_relative_eq!(s[0], 0.507042, epsilon = 1e-6);
        // independent scalar evaluation
        let s2 = 2.67 / (0.61 + 0.56 * 0.5 + 0.01);
        let s3 = 1.29 * 0.5 / (2.89 + 0.99 + 0.01);
        let expected = 0.33 * (1.0 + s[0]).ln() + 0.33 * (1.0f64 + s2).ln() + 0.34 * (1.0f64 + s3).ln();
        assert_relative_eq!(sum_rate(&inst, &p), expected, epsilon = 1e-12);
    }

    #[test]
    fn zero_power_zero_rate() {
        let inst = example_one();
        let p = DVector::zeros(3);
        assert!(sinr(&inst, &p).iter().all(|&x| x == 0.0));
        assert_eq!(sum_rate(&inst, &p), 0.0);
        let ops = build_operators(&inst).unwrap();
        assert_eq!(power_from_gamma(&ops, &DVector::zeros(3)).unwrap(), DVector::zeros(3));
    }

    #[test]
    fn infeasible_gamma_rejected() {
        let ops = build_operators(&example_one()).unwrap();
        let err = power_from_gamma(&ops, &DVector::from_element(3, 10.0)).unwrap_err();
        assert!(matches!(err, WsrmError::InfeasibleGamma { .. }));
    }

    #[test]
    fn invalid_instances_rejected() {
        let g = DMatrix::from_element(2, 2, 1.0);
        let one = DVector::from_element(2, 1.0);
        let half = DVector::from_element(2, 0.5);
        assert!(WsrmInstance::new(g.clone(), one.clone(), one.clone(), one.clone(), 1.0).is_err());
        assert!(WsrmInstance::new(g.clone(), one.clone(), half.clone(), one.clone(), 0.0).is_err());
        let mut bad = g.clone();
        bad[(1, 1)] = 0.0;
        assert!(matches!(
            WsrmInstance::new(bad, one.clone(), half.clone(), one.clone(), 1.0),
            Err(WsrmError::ZeroDirectGain { link: 1, .. })
        ));
        assert!(WsrmInstance::new(g, one.clone(), half, -one, 1.0).is_err());
    }

    #[test]
    fn softplus_is_stable() {
        assert_relative_eq!(softplus(0.0), 2f64.ln());
        assert_relative_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0);
    }
}
