//! Reference labels for small instances.
//!
//! [`grid_search`] enumerates power vectors on the budget face
//! `m^T p = P` at the requested resolution, samples the interior on a grid
//! ten times coarser, and polishes the best point with one BCD run started
//! from its SINRs. [`label_dataset`] attaches labels to a whole dataset with
//! either the grid or multistart BCD.

use std::cmp::Ordering;

use nalgebra::DVector;

use crate::bcd::{self, BcdConfig};
use crate::error::{Result, WsrmError};
use crate::par::{self, Exec};
use crate::problem::{self, Label, OracleTag, WsrmInstance};

/// Largest link count the grid accepts.
pub const GRID_MAX_LINKS: usize = 4;

pub const DEFAULT_RESOLUTION: f64 = 1e-3;

/// Log-SINR assigned to links the grid switches off entirely.
pub const OFF_LOG_SINR: f64 = -690.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LabelStrategy {
    Grid { resolution: f64 },
    Multistart { starts: usize },
}

impl Default for LabelStrategy {
    fn default() -> Self {
        LabelStrategy::Grid { resolution: DEFAULT_RESOLUTION }
    }
}

/// Best grid point before polishing.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub power: DVector<f64>,
    pub rate: f64,
    pub evaluated: usize,
}

/// Evaluates the weighted rate of `p_j = counts_j * unit_j`.
struct Evaluator<'a> {
    inst: &'a WsrmInstance,
    unit: Vec<f64>,
}

impl Evaluator<'_> {
    fn rate(&self, counts: &[usize]) -> f64 {
        let g = self.inst.gains();
        let l = counts.len();
        let mut total = 0.0;
        for r in 0..l {
            if counts[r] == 0 {
                continue;
            }
            let mut interference = self.inst.noise()[r];
            for c in 0..l {
                if c != r {
                    interference += g[(r, c)] * counts[c] as f64 * self.unit[c];
                }
            }
            let signal = g[(r, r)] * counts[r] as f64 * self.unit[r];
            total += self.inst.weights()[r] * (signal / interference).ln_1p();
        }
        total
    }
}

#[derive(Debug, Clone)]
struct Best {
    rate: f64,
    counts: Vec<usize>,
    evaluated: usize,
}

impl Best {
    fn empty() -> Self {
        Self { rate: f64::NEG_INFINITY, counts: Vec::new(), evaluated: 0 }
    }

    fn offer(&mut self, rate: f64, counts: &[usize]) {
        self.evaluated += 1;
        if rate > self.rate {
            self.rate = rate;
            self.counts.clear();
            self.counts.extend_from_slice(counts);
        }
    }
}

/// Visits every composition of `total` into `parts` nonnegative parts in
/// lexicographic order, writing into `buf[start..start + parts]`.
fn compositions(buf: &mut [usize], start: usize, total: usize, visit: &mut impl FnMut(&[usize])) {
    let parts = buf.len() - start;
    if parts == 1 {
        buf[start] = total;
        visit(buf);
        return;
    }
    for k in 0..=total {
        buf[start] = k;
        compositions(buf, start + 1, total - k, visit);
    }
}

/// Scans one slab of a grid (fixed first coordinate) with `slack` extra
/// trailing parts that absorb unused budget.
fn scan_slab(eval: &Evaluator<'_>, l: usize, steps: usize, first: usize, slack: bool) -> Best {
    let mut best = Best::empty();
    let width = if slack { l + 1 } else { l };
    let mut buf = vec![0usize; width];
    buf[0] = first;
    if width == 1 {
        best.offer(eval.rate(&buf[..l]), &buf[..l]);
        return best;
    }
    compositions(&mut buf, 1, steps - first, &mut |c| best.offer(eval.rate(&c[..l]), &c[..l]));
    best
}

fn scale_of(a: &[usize], ua: &[f64], b: &[usize], ub: &[f64]) -> Ordering {
    for i in 0..a.len() {
        let (x, y) = (a[i] as f64 * ua[i], b[i] as f64 * ub[i]);
        match x.partial_cmp(&y) {
            Some(Ordering::Equal) | None => continue,
            Some(o) => return o,
        }
    }
    Ordering::Equal
}

fn scan(inst: &WsrmInstance, steps: usize, slack: bool, exec: Exec) -> (Best, Vec<f64>) {
    let l = inst.links();
    let unit: Vec<f64> =
        (0..l).map(|j| inst.budget() / (inst.power_weights()[j] * steps as f64)).collect();
    let eval = Evaluator { inst, unit };
    let slabs = par::map_indices(exec, steps + 1, |first| scan_slab(&eval, l, steps, first, slack));
    let mut best = Best::empty();
    for slab in slabs {
        best.evaluated += slab.evaluated;
        if slab.rate > best.rate {
            best.rate = slab.rate;
            best.counts = slab.counts;
        }
    }
    (best, eval.unit)
}

/// Exhaustive search without the BCD polish.
pub fn grid_points(inst: &WsrmInstance, resolution: f64, exec: Exec) -> Result<GridPoint> {
    let l = inst.links();
    if l > GRID_MAX_LINKS {
        return Err(WsrmError::TooLarge(l));
    }
    if !(resolution > 0.0 && resolution <= 1.0) {
        return Err(WsrmError::InvalidInstance(format!("resolution {resolution} outside (0, 1]")));
    }
    let steps = (1.0 / resolution).round().max(1.0) as usize;
    let (face, face_unit) = scan(inst, steps, false, exec);
    let coarse = (steps / 10).max(1);
    let (inner, inner_unit) = scan(inst, coarse, true, exec);
    let evaluated = face.evaluated + inner.evaluated;
    let (counts, unit, rate) = match inner.rate.partial_cmp(&face.rate) {
        Some(Ordering::Greater) => (inner.counts, inner_unit, inner.rate),
        Some(Ordering::Equal)
            if scale_of(&inner.counts, &inner_unit, &face.counts, &face_unit) == Ordering::Less =>
        {
            (inner.counts, inner_unit, inner.rate)
        }
        _ => (face.counts, face_unit, face.rate),
    };
    let power = DVector::from_fn(l, |j, _| counts[j] as f64 * unit[j]);
    Ok(GridPoint { power, rate, evaluated })
}

/// Label from the grid, polished by one BCD run seeded at the grid point.
pub fn grid_search(inst: &WsrmInstance, resolution: f64, exec: Exec) -> Result<Label> {
    let point = grid_points(inst, resolution, exec)?;
    let ops = problem::build_operators(inst)?;
    let log_sinr = problem::sinr(inst, &point.power).map(|s| if s > 0.0 { s.ln().max(OFF_LOG_SINR) } else { OFF_LOG_SINR });
    let y2 = bcd::update_y(&log_sinr);
    let polished = bcd::bcd_solve_with_ops(inst, &ops, &y2, &BcdConfig::default());
    let gamma_star = match polished {
        Ok(sol) if sol.rate >= point.rate => sol.gamma_tilde,
        _ => log_sinr,
    };
    finish_label(inst, &ops, gamma_star, OracleTag::Grid)
}

fn finish_label(
    inst: &WsrmInstance,
    ops: &problem::DerivedOperators,
    gamma_star: DVector<f64>,
    oracle_tag: OracleTag,
) -> Result<Label> {
    let power = problem::power_from_gamma(ops, &gamma_star.map(f64::exp))?;
    let rate_star = problem::sum_rate(inst, &power);
    Ok(Label { gamma_star, rate_star, oracle_tag })
}

/// Label from the best of `starts` seeded BCD runs.
pub fn multistart_label(inst: &WsrmInstance, starts: usize, seed: u64, exec: Exec) -> Result<Label> {
    let ms = bcd::multistart_bcd(inst, starts, seed, &BcdConfig::default(), exec)?;
    let ops = problem::build_operators(inst)?;
    finish_label(inst, &ops, ms.best.gamma_tilde, OracleTag::Multistart)
}

/// Per-instance seed so instances draw independent multistart streams.
pub fn instance_seed(seed: u64, index: usize) -> u64 {
    // splitmix64 finalizer
    let mut z = seed.wrapping_add((index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn label_instance(inst: &WsrmInstance, strategy: LabelStrategy, seed: u64, exec: Exec) -> Result<Label> {
    match strategy {
        LabelStrategy::Grid { resolution } => grid_search(inst, resolution, exec),
        LabelStrategy::Multistart { starts } => multistart_label(inst, starts, seed, exec),
    }
}

/// Returns the dataset with a fresh label on every instance. Instances are
/// processed in parallel under [`Exec::Parallel`]; the inner searches then
/// run sequentially.
pub fn label_dataset(
    dataset: &[WsrmInstance],
    strategy: LabelStrategy,
    seed: u64,
    exec: Exec,
) -> Result<Vec<WsrmInstance>> {
    par::map_indices(exec, dataset.len(), |index| {
        let inst = &dataset[index];
        label_instance(inst, strategy, instance_seed(seed, index), Exec::Sequential)
            .map(|label| inst.clone().with_label(label))
    })
    .into_iter()
    .collect()
}

/// Checks a label against its instance: recovered power within budget and
/// the stored rate reproduced. Returns the recomputed rate.
pub fn check_label(inst: &WsrmInstance, label: &Label, rate_tolerance: f64) -> Result<f64> {
    let ops = problem::build_operators(inst)?;
    let power = problem::power_from_gamma(&ops, &label.gamma_star.map(f64::exp))?;
    let used = inst.power_weights().dot(&power);
    if used > inst.budget() * (1.0 + 1e-6) {
        return Err(WsrmError::Certificate(format!("label uses {used}, budget {}", inst.budget())));
    }
    let rate = problem::sum_rate(inst, &power);
    if (rate - label.rate_star).abs() > rate_tolerance * label.rate_star.abs().max(1.0) {
        return Err(WsrmError::Certificate(format!("label rate {} but recomputed {rate}", label.rate_star)));
    }
    Ok(rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::example_one;
    use nalgebra::DMatrix;

    #[test]
    fn compositions_are_lexicographic_and_complete() {
        let mut seen = Vec::new();
        let mut buf = vec![0; 3];
        compositions(&mut buf, 0, 2, &mut |c| seen.push(c.to_vec()));
        assert_eq!(seen.len(), 6);
        assert_eq!(seen[0], vec![0, 0, 2]);
        assert_eq!(seen[5], vec![2, 0, 0]);
        assert!(seen.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn single_link_uses_full_budget() {
        let inst = WsrmInstance::new(
            DMatrix::from_element(1, 1, 2.0),
            DVector::from_element(1, 0.3),
            DVector::from_element(1, 1.0),
            DVector::from_element(1, 4.0),
            3.0,
        )
        .unwrap();
        for res in [1.0, 0.1, 1e-3] {
            let pt = grid_points(&inst, res, Exec::Sequential).unwrap();
            assert_eq!(pt.power[0], 0.75);
        }
        let label = grid_search(&inst, 0.1, Exec::Sequential).unwrap();
        assert!((label.rate_star - (1.0f64 + 2.0 * 0.75 / 0.3).ln()).abs() < 1e-12);
    }

    #[test]
    fn too_large_rejected() {
        let inst = WsrmInstance::new(
            DMatrix::from_element(5, 5, 1.0),
            DVector::from_element(5, 0.1),
            DVector::from_element(5, 0.2),
            DVector::from_element(5, 1.0),
            1.0,
        )
        .unwrap();
        assert!(matches!(grid_search(&inst, 0.1, Exec::Sequential), Err(WsrmError::TooLarge(5))));
    }

    #[test]
    fn sequential_matches_parallel() {
        let a = grid_search(&example_one(), 1e-2, Exec::Sequential).unwrap();
        let b = grid_search(&example_one(), 1e-2, Exec::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn example_one_label_checks_out() {
        let inst = example_one();
        let label = grid_search(&inst, 1e-3, Exec::Parallel).unwrap();
        check_label(&inst, &label, 1e-9).unwrap();
        assert!((label.rate_star - 2.146662).abs() < 1e-5, "{}", label.rate_star);
    }
}
