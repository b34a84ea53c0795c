//! Joint transmit/receive beamforming on top of power control.
//!
//! For fixed beamformers the effective gains are `G_li = |v_l^H H_l u_i|^2`
//! and the problem reduces to the scalar one. The virtual dual network uses
//! the transposed gains with noise `m`, power weights `n` and the same
//! budget; its constraint matrix is similar to `B' = F^T + m sigma^T / P`,
//! so both networks share one feasible SINR region. IP-BCD alternates a BCD
//! pass on the dual, LMMSE transmit updates, a BCD pass on the primal and
//! LMMSE receive updates. Each pass starts from the SINRs the previous one
//! achieved, which keeps the sum-rate trace nondecreasing.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::bcd::{self, BcdConfig, BcdSolution};
use crate::error::{Result, WsrmError};
use crate::oracle::OFF_LOG_SINR;
use crate::pf::{self, KrauseOptions};
use crate::problem::{self, DerivedOperators, Label, WsrmInstance};

type CMat = DMatrix<Complex64>;
type CVec = DVector<Complex64>;

/// Smallest direct gain accepted when forming `G`.
pub const MIN_DIRECT_GAIN: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq)]
pub struct BeamformingInstance {
    channels: Vec<CMat>,
    noise: DVector<f64>,
    weights: DVector<f64>,
    power_weights: DVector<f64>,
    budget: f64,
    pub label: Option<Label>,
}

impl BeamformingInstance {
    /// `channels[l]` is the `N_l x N` matrix from the transmitter to
    /// receiver `l`.
    pub fn new(
        channels: Vec<CMat>,
        noise: DVector<f64>,
        weights: DVector<f64>,
        power_weights: DVector<f64>,
        budget: f64,
    ) -> Result<Self> {
        let l = channels.len();
        if l == 0 {
            return Err(WsrmError::InvalidInstance("no links".into()));
        }
        let n_tx = channels[0].ncols();
        for (i, h) in channels.iter().enumerate() {
            if h.ncols() != n_tx || h.nrows() == 0 || n_tx == 0 {
                return Err(WsrmError::Dimension(format!(
                    "H_{i} is {}x{}, expected N_l x {n_tx} with N_l >= 1",
                    h.nrows(),
                    h.ncols()
                )));
            }
            if h.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
                return Err(WsrmError::InvalidInstance(format!("H_{i} has a non-finite entry")));
            }
        }
        // reuse the scalar validation on a placeholder gain matrix
        WsrmInstance::new(
            DMatrix::identity(l, l),
            noise.clone(),
            weights.clone(),
            power_weights.clone(),
            budget,
        )?;
        Ok(Self { channels, noise, weights, power_weights, budget, label: None })
    }

    pub fn with_label(mut self, label: Label) -> Self {
        self.label = Some(label);
        self
    }

    pub fn links(&self) -> usize {
        self.channels.len()
    }

    pub fn tx_antennas(&self) -> usize {
        self.channels[0].ncols()
    }

    pub fn channels(&self) -> &[CMat] {
        &self.channels
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

    /// Scalar instance seen through fixed beamformers.
    pub fn primal_instance(&self, pair: &BeamformerPair) -> Result<WsrmInstance> {
        let g = gains_from_beamformers(self, pair)?;
        WsrmInstance::new(g, self.noise.clone(), self.weights.clone(), self.power_weights.clone(), self.budget)
    }
}

/// Transmit beamformers `u_l` (length `N`) and receive beamformers `v_l`
/// (length `N_l`), all of unit norm.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformerPair {
    pub u: Vec<CVec>,
    pub v: Vec<CVec>,
}

impl BeamformerPair {
    /// Largest deviation of any beamformer norm from one.
    pub fn norm_error(&self) -> f64 {
        self.u.iter().chain(self.v.iter()).map(|x| (x.norm() - 1.0).abs()).fold(0.0, f64::max)
    }
}

fn normalized(x: CVec) -> Option<CVec> {
    let n = x.norm();
    (n > 0.0 && n.is_finite()).then(|| x / Complex64::from(n))
}

/// `G_li = |v_l^H H_l u_i|^2`.
pub fn gains_from_beamformers(binst: &BeamformingInstance, pair: &BeamformerPair) -> Result<DMatrix<f64>> {
    let l = binst.links();
    if pair.u.len() != l || pair.v.len() != l {
        return Err(WsrmError::Dimension("beamformer count differs from link count".into()));
    }
    let mut g = DMatrix::zeros(l, l);
    for r in 0..l {
        let h = &binst.channels[r];
        if pair.v[r].len() != h.nrows() {
            return Err(WsrmError::Dimension(format!("v_{r} has length {}", pair.v[r].len())));
        }
        let row = h.adjoint() * &pair.v[r];
        for c in 0..l {
            if pair.u[c].len() != h.ncols() {
                return Err(WsrmError::Dimension(format!("u_{c} has length {}", pair.u[c].len())));
            }
            g[(r, c)] = row.dotc(&pair.u[c]).norm_sqr();
        }
        if g[(r, r)] < MIN_DIRECT_GAIN {
            return Err(WsrmError::DegenerateDirectGain { link: r, value: g[(r, r)] });
        }
    }
    Ok(g)
}

fn hermitian_solve(a: CMat, rhs: CVec, link: usize) -> Result<CVec> {
    let chol = a.cholesky().ok_or(WsrmError::SingularRegularizer(link))?;
    Ok(chol.solve(&rhs))
}

/// LMMSE transmit beamformer of link `l` for receive beamformers `v` and
/// dual powers `dual_power`.
pub fn lmmse_transmit(binst: &BeamformingInstance, v: &[CVec], dual_power: &DVector<f64>, l: usize) -> Result<CVec> {
    let n = binst.tx_antennas();
    let m_l = binst.power_weights[l];
    if m_l <= 0.0 {
        return Err(WsrmError::SingularRegularizer(l));
    }
    let mut a = CMat::identity(n, n) * Complex64::from(m_l);
    for j in 0..binst.links() {
        if j != l && dual_power[j] > 0.0 {
            let x = binst.channels[j].adjoint() * &v[j];
            a += (&x * x.adjoint()) * Complex64::from(dual_power[j]);
        }
    }
    let rhs = binst.channels[l].adjoint() * &v[l];
    normalized(hermitian_solve(a, rhs, l)?).ok_or(WsrmError::DegenerateDirectGain { link: l, value: 0.0 })
}

/// LMMSE receive beamformer of link `l` for transmit beamformers `u` and
/// powers `power`. The regularizer is the receiver noise `n_l`.
pub fn lmmse_receive(binst: &BeamformingInstance, u: &[CVec], power: &DVector<f64>, l: usize) -> Result<CVec> {
    let h = &binst.channels[l];
    let n_l = binst.noise[l];
    let mut a = CMat::identity(h.nrows(), h.nrows()) * Complex64::from(n_l);
    for j in 0..binst.links() {
        if j != l && power[j] > 0.0 {
            let x = h * &u[j];
            a += (&x * x.adjoint()) * Complex64::from(power[j]);
        }
    }
    let rhs = h * &u[l];
    normalized(hermitian_solve(a, rhs, l)?).ok_or(WsrmError::DegenerateDirectGain { link: l, value: 0.0 })
}

/// Downlink SINR of link `l` when its receiver uses `v`.
pub fn receive_sinr(binst: &BeamformingInstance, u: &[CVec], power: &DVector<f64>, l: usize, v: &CVec) -> f64 {
    let row = binst.channels[l].adjoint() * v;
    let mut interference = binst.noise[l];
    for j in 0..binst.links() {
        if j != l {
            interference += power[j] * row.dotc(&u[j]).norm_sqr();
        }
    }
    power[l] * row.dotc(&u[l]).norm_sqr() / interference
}

/// Dual-network SINR of link `l` when its transmit beamformer is `u`.
pub fn dual_sinr(binst: &BeamformingInstance, v: &[CVec], dual_power: &DVector<f64>, l: usize, u: &CVec) -> f64 {
    let mut interference = binst.power_weights[l];
    let mut signal = 0.0;
    for j in 0..binst.links() {
        let g = (binst.channels[j].adjoint() * &v[j]).dotc(u).norm_sqr();
        if j == l {
            signal = dual_power[l] * g;
        } else {
            interference += dual_power[j] * g;
        }
    }
    signal / interference
}

/// `B' = F^T + m sigma^T / P`.
pub fn dual_operators(ops: &DerivedOperators) -> DMatrix<f64> {
    ops.interference.transpose() + &ops.power_weights * ops.normalized_noise.transpose() / ops.budget
}

/// The virtual dual instance: transposed gains, noise `m`, power weights
/// `n`, same weights and budget. Its extended matrix is
/// `diag(G)^{-1} B' diag(G)`.
pub fn dual_instance(inst: &WsrmInstance) -> Result<WsrmInstance> {
    WsrmInstance::new(
        inst.gains().transpose(),
        inst.power_weights().clone(),
        inst.weights().clone(),
        inst.noise().clone(),
        inst.budget(),
    )
}

/// Effective row of link `l`: the dominant left singular direction of `H_l`
/// applied to `H_l`, as a length-`N` vector holding `(s^H H_l)^T`.
fn effective_row(h: &CMat) -> CVec {
    let svd = h.clone().svd(true, false);
    let u = svd.u.expect("left vectors requested");
    let k = svd.singular_values.imax();
    let s = u.column(k).into_owned();
    (h.adjoint() * s).conjugate()
}

/// Fixed linear precoder: regularized zero forcing on the effective rows
/// `h_l^T = s_l^H H_l`, regularizer `sum(n) / P`, columns normalized, with
/// matched receivers `v_l = H_l u_l / |H_l u_l|`.
pub fn suboptimal_precoder(binst: &BeamformingInstance) -> Result<BeamformerPair> {
    let l = binst.links();
    let n = binst.tx_antennas();
    if n < l {
        return Err(WsrmError::RankDeficient);
    }
    let mut stacked = CMat::zeros(l, n);
    for (i, h) in binst.channels.iter().enumerate() {
        stacked.set_row(i, &effective_row(h).transpose());
    }
    let alpha = binst.noise.sum() / binst.budget;
    let gram = &stacked * stacked.adjoint() + CMat::identity(l, l) * Complex64::from(alpha);
    let inv = gram.try_inverse().ok_or(WsrmError::RankDeficient)?;
    let precoder = stacked.adjoint() * inv;
    let mut u = Vec::with_capacity(l);
    let mut v = Vec::with_capacity(l);
    for i in 0..l {
        let col = normalized(precoder.column(i).into_owned()).ok_or(WsrmError::RankDeficient)?;
        let rx = normalized(&binst.channels[i] * &col).ok_or(WsrmError::RankDeficient)?;
        u.push(col);
        v.push(rx);
    }
    Ok(BeamformerPair { u, v })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IpBcdConfig {
    pub bcd: BcdConfig,
    pub max_rounds: usize,
    /// Stop when a round changes the sum rate by at most this much.
    pub tolerance: f64,
}

impl Default for IpBcdConfig {
    fn default() -> Self {
        Self { bcd: BcdConfig::default(), max_rounds: 200, tolerance: 1e-7 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IpBcdSolution {
    pub pair: BeamformerPair,
    pub power: DVector<f64>,
    pub dual_power: DVector<f64>,
    pub gamma_tilde: DVector<f64>,
    pub rate: f64,
    /// Rate with the initial beamformers, then after every round.
    pub trace: Vec<f64>,
    pub rounds: usize,
    pub converged: bool,
}

fn warm_start(sinr: &DVector<f64>) -> DVector<f64> {
    bcd::update_y(&sinr.map(|s| if s > 0.0 { s.ln().max(OFF_LOG_SINR) } else { OFF_LOG_SINR }))
}

fn solve_scalar(inst: &WsrmInstance, y2: &DVector<f64>, config: &BcdConfig) -> Result<BcdSolution> {
    let ops = problem::build_operators(inst)?;
    bcd::bcd_solve_with_ops(inst, &ops, y2, config)
}

/// Power control with fixed beamformers, started from `y2 = 1/2`.
pub fn fixed_precoder_bcd(binst: &BeamformingInstance, pair: &BeamformerPair, config: &BcdConfig) -> Result<BcdSolution> {
    let inst = binst.primal_instance(pair)?;
    solve_scalar(&inst, &DVector::from_element(binst.links(), 0.5), config)
}

/// IP-BCD from the fixed precoder of [`suboptimal_precoder`].
pub fn ip_bcd_solve(binst: &BeamformingInstance, config: &IpBcdConfig) -> Result<IpBcdSolution> {
    ip_bcd_from(binst, suboptimal_precoder(binst)?, config)
}

pub fn ip_bcd_from(binst: &BeamformingInstance, pair: BeamformerPair, config: &IpBcdConfig) -> Result<IpBcdSolution> {
    let l = binst.links();
    let start = fixed_precoder_bcd(binst, &pair, &config.bcd)?;
    let mut best = IpBcdSolution {
        pair,
        power: start.power.clone(),
        dual_power: DVector::zeros(l),
        gamma_tilde: start.gamma_tilde.clone(),
        rate: start.rate,
        trace: vec![start.rate],
        rounds: 0,
        converged: false,
    };
    let mut pair = best.pair.clone();
    let mut sinr = start.gamma_tilde.map(f64::exp);
    let mut previous = start.rate;
    for round in 1..=config.max_rounds {
        // dual pass and transmit update
        let dual = dual_instance(&binst.primal_instance(&pair)?)?;
        let dsol = solve_scalar(&dual, &warm_start(&sinr), &config.bcd)?;
        let u: Vec<CVec> = (0..l).map(|i| lmmse_transmit(binst, &pair.v, &dsol.power, i)).collect::<Result<_>>()?;
        let dual_sinr_new = DVector::from_fn(l, |i, _| dual_sinr(binst, &pair.v, &dsol.power, i, &u[i]));
        pair.u = u;
        // primal pass and receive update
        let primal = binst.primal_instance(&pair)?;
        let psol = solve_scalar(&primal, &warm_start(&dual_sinr_new), &config.bcd)?;
        let v: Vec<CVec> = (0..l).map(|i| lmmse_receive(binst, &pair.u, &psol.power, i)).collect::<Result<_>>()?;
        pair.v = v;
        sinr = DVector::from_fn(l, |i, _| receive_sinr(binst, &pair.u, &psol.power, i, &pair.v[i]));
        let rate = problem::weighted_rate(binst.weights(), &sinr);
        best.trace.push(rate);
        best.rounds = round;
        if rate > best.rate {
            best.rate = rate;
            best.pair = pair.clone();
            best.power = psol.power.clone();
            best.dual_power = dsol.power.clone();
            best.gamma_tilde = sinr.map(f64::ln);
        }
        if (rate - previous).abs() <= config.tolerance {
            best.converged = true;
            break;
        }
        previous = rate;
    }
    Ok(best)
}

/// Which beamformer updates a lockstep round performs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoundOptions {
    pub update_transmit: bool,
    pub update_receive: bool,
}

impl Default for RoundOptions {
    fn default() -> Self {
        Self { update_transmit: true, update_receive: true }
    }
}

/// Result of [`lockstep_round`].
#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutcome {
    pub pair: BeamformerPair,
    /// Gains seen by the primal pass: new transmit, old receive beamformers.
    pub gains: DMatrix<f64>,
    pub dual_gamma_tilde: DVector<f64>,
    pub dual_power: DVector<f64>,
    pub gamma_tilde: DVector<f64>,
    pub power: DVector<f64>,
}

/// One round driven by an externally chosen `y2`: a single fixed-point pass
/// on the dual network, the transmit update, a single pass on the primal
/// network with the same `y2`, and the receive update.
pub fn lockstep_round(
    binst: &BeamformingInstance,
    pair: &BeamformerPair,
    y2: &DVector<f64>,
    options: RoundOptions,
    krause: KrauseOptions,
) -> Result<RoundOutcome> {
    let l = binst.links();
    let primal_old = binst.primal_instance(pair)?;
    let dual = dual_instance(&primal_old)?;
    let dual_ops = problem::build_operators(&dual)?;
    let (dual_gamma_tilde, _) = bcd::solve_gamma_block(&dual_ops.extended, dual.weights(), y2, krause)?;
    let dual_power = problem::power_from_gamma(&dual_ops, &dual_gamma_tilde.map(f64::exp))?;
    let mut next = pair.clone();
    if options.update_transmit {
        next.u = (0..l).map(|i| lmmse_transmit(binst, &pair.v, &dual_power, i)).collect::<Result<_>>()?;
    }
    let primal = binst.primal_instance(&next)?;
    let ops = problem::build_operators(&primal)?;
    let (gamma_tilde, _) = bcd::solve_gamma_block(&ops.extended, primal.weights(), y2, krause)?;
    let power = problem::power_from_gamma(&ops, &gamma_tilde.map(f64::exp))?;
    if options.update_receive {
        next.v = (0..l).map(|i| lmmse_receive(binst, &next.u, &power, i)).collect::<Result<_>>()?;
    }
    Ok(RoundOutcome { pair: next, gains: primal.gains().clone(), dual_gamma_tilde, dual_power, gamma_tilde, power })
}

/// `gt' = log(z' / (B' z')_l)` for the fixed point of the dual map; equals
/// the dual-instance log-SINR because the two matrices are similar.
pub fn dual_gamma_from_b_prime(b_prime: &DMatrix<f64>, w: &DVector<f64>, y2: &DVector<f64>) -> Result<DVector<f64>> {
    let rep = pf::krause_iterate(b_prime, w, y2)?;
    Ok(pf::gamma_from_z(b_prime, &rep.z))
}
