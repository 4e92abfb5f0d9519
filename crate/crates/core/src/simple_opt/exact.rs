//! Exact fine-policy search by purchase-set enumeration.
//!
//! Post-regulation value `v - ℓ(k, y, c)` is nondecreasing in both `v` and
//! `k`, so every purchase set is upward closed in the value-by-effectiveness
//! grid: a staircase. For a fixed staircase `S` the conditional externality
//! is nonincreasing in `y`, so the best policy inducing `S` uses the largest
//! fine that still (a) pays the floor at price `min_S pv` and (b) keeps every
//! atom outside `S` strictly below that price.
//!
//! `(a)` gives a closed-form cap per atom. For `(b)` only minimal atoms of `S`
//! against maximal atoms of the complement matter. For such a pair the gap
//! `pv_a - pv_b` moves monotonically in `y`: `d ℓ / d y` is the buyer's risk,
//! which is larger for the less effective buyer. Each pair therefore yields a
//! lower or an upper bound on `y`, found by bisection.

use crate::error::{Error, Result};
use crate::exec::map_indexed;
use crate::model::{loss_of, summarize, Policy};
use crate::population::{Instance, JointAtom};

use super::{max_fine_for_loss, Candidate, Method, SolveResult, SolverConfig};

/// Populations up to this many joint atoms are solved by enumeration.
pub const EXACT_ATOM_LIMIT: usize = 64;

/// Required gap between the price and the best excluded post-value.
const SEPARATION: f64 = 1e-10;

const BISECTION_STEPS: usize = 200;

/// Number of upward-closed subsets of an `nv x nk` grid, empty set included.
pub fn staircase_count(nv: usize, nk: usize) -> u128 {
    // C(nv + nk, nk) computed incrementally stays exact in u128 here.
    let mut acc: u128 = 1;
    for i in 0..nk as u128 {
        acc = acc * (nv as u128 + i + 1) / (i + 1);
    }
    acc
}

/// All nonempty staircases as per-value-row thresholds.
///
/// Row `i` contains efficiency indices `t[i]..nk`; `t` is nonincreasing.
fn staircases(nv: usize, nk: usize) -> Vec<Vec<usize>> {
    fn rec(row: usize, cap: usize, cur: &mut Vec<usize>, nv: usize, out: &mut Vec<Vec<usize>>) {
        if row == nv {
            out.push(cur.clone());
            return;
        }
        for t in 0..=cap {
            cur.push(t);
            rec(row + 1, t, cur, nv, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, nk, &mut Vec::with_capacity(nv), nv, &mut out);
    out.retain(|t| t.iter().any(|&ti| ti < nk));
    out
}

struct Grid<'a> {
    values: Vec<f64>,
    effs: Vec<f64>,
    atoms: &'a [JointAtom],
    value_probs: Vec<f64>,
    /// `eff_tail[j] = Pr[k index >= j]`.
    eff_tail: Vec<f64>,
}

impl<'a> Grid<'a> {
    fn new(inst: &Instance, atoms: &'a [JointAtom]) -> Self {
        let pop = inst.population();
        let effs: Vec<f64> = pop.efficiencies().points().collect();
        let mut eff_tail = vec![0.0; effs.len() + 1];
        for (j, a) in pop.efficiencies().atoms().iter().enumerate().rev() {
            eff_tail[j] = eff_tail[j + 1] + a.prob;
        }
        Self {
            values: pop.values().points().collect(),
            effs,
            atoms,
            value_probs: pop.values().atoms().iter().map(|a| a.prob).collect(),
            eff_tail,
        }
    }

    fn pv(&self, i: usize, j: usize, y: f64, c: f64) -> f64 {
        self.values[i] - loss_of(self.effs[j], y, c)
    }
}

/// Largest `y` in `[0, hi]` with `gap(y) >= SEPARATION`, for `gap` nonincreasing.
fn last_separated(gap: impl Fn(f64) -> f64, hi: f64) -> Option<f64> {
    if gap(hi) >= SEPARATION {
        return Some(hi);
    }
    if gap(0.0) < SEPARATION {
        return None;
    }
    let (mut lo, mut up) = (0.0, hi);
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + up);
        if mid <= lo || mid >= up {
            break;
        }
        if gap(mid) >= SEPARATION {
            lo = mid;
        } else {
            up = mid;
        }
    }
    Some(lo)
}

/// Best policy with mandated cost `c` that induces the staircase `t`.
fn solve_staircase(g: &Grid, t: &[usize], c: f64, floor: f64, tol: f64) -> Option<Candidate> {
    let nv = g.values.len();
    let nk = g.effs.len();
    let mass: f64 = (0..nv).map(|i| g.value_probs[i] * g.eff_tail[t[i]]).sum();
    let needed = c + floor / mass;

    let minimal: Vec<(usize, usize)> = (0..nv)
        .filter(|&i| t[i] < nk && (i == 0 || t[i - 1] > t[i]))
        .map(|i| (i, t[i]))
        .collect();
    let maximal: Vec<(usize, usize)> = (0..nv)
        .filter(|&i| t[i] > 0 && (i + 1 == nv || t[i + 1] < t[i]))
        .map(|i| (i, t[i] - 1))
        .collect();

    let mut y = f64::INFINITY;
    for &(i, j) in &minimal {
        let slack = g.values[i] - needed;
        if slack < -1e-12 {
            return None;
        }
        y = y.min(max_fine_for_loss(g.effs[j], slack.max(0.0), c));
    }

    // Upper bounds first; lower bounds are checked at the final fine.
    for &(ia, ja) in &minimal {
        for &(ib, jb) in &maximal {
            if g.effs[ja] < g.effs[jb] {
                let gap = |yy: f64| g.pv(ia, ja, yy, c) - g.pv(ib, jb, yy, c);
                y = last_separated(gap, y)?;
            }
        }
    }
    for &(ia, ja) in &minimal {
        for &(ib, jb) in &maximal {
            if g.effs[ja] >= g.effs[jb] && g.pv(ia, ja, y, c) - g.pv(ib, jb, y, c) < SEPARATION {
                return None;
            }
        }
    }

    let price = minimal
        .iter()
        .map(|&(i, j)| g.pv(i, j, y, c))
        .fold(f64::INFINITY, f64::min)
        .max(0.0);
    let policy = Policy { y, c, p: price };
    let summary = summarize(g.atoms, &policy, 1.0);
    (summary.profit >= floor - tol).then_some(Candidate {
        policy,
        ext: summary.conditional,
    })
}

/// Exact optimum over policies with the given mandated cost.
pub(crate) fn exact_at_cost(
    inst: &Instance,
    atoms: &[JointAtom],
    sets: &[Vec<usize>],
    c: f64,
    config: &SolverConfig,
) -> Option<Candidate> {
    let g = Grid::new(inst, atoms);
    let floor = inst.profit_floor();
    map_indexed(sets.len(), config.execution, |idx| {
        solve_staircase(&g, &sets[idx], c, floor, config.tolerance)
    })
    .into_iter()
    .fold(None, Candidate::better)
}

pub(crate) fn all_staircases(inst: &Instance) -> Vec<Vec<usize>> {
    let pop = inst.population();
    staircases(pop.values().len(), pop.efficiencies().len())
}

pub fn best_fine_policy_exact(inst: &Instance, config: &SolverConfig) -> Result<SolveResult> {
    let atoms = inst.population().product_atoms();
    let sets = all_staircases(inst);
    let best = exact_at_cost(inst, &atoms, &sets, 0.0, config)
        .expect("the zero fine at the unregulated price is always feasible");
    Ok(SolveResult::new(
        inst,
        best.policy,
        Method::ExactEnumeration,
        config.tolerance,
    ))
}

/// Best fine policy whose purchase set is the staircase `thresholds`
/// (row `i` buys from efficiency index `thresholds[i]` up), if any policy
/// induces it feasibly.
pub fn best_fine_policy_for_set(
    inst: &Instance,
    thresholds: &[usize],
    config: &SolverConfig,
) -> Result<Option<SolveResult>> {
    let pop = inst.population();
    let (nv, nk) = (pop.values().len(), pop.efficiencies().len());
    let shaped = thresholds.len() == nv
        && thresholds.iter().all(|&t| t <= nk)
        && thresholds.windows(2).all(|w| w[0] >= w[1])
        && thresholds.iter().any(|&t| t < nk);
    if !shaped {
        return Err(Error::Domain(format!(
            "{thresholds:?} is not a nonempty staircase on a {nv}x{nk} grid"
        )));
    }
    let atoms = pop.product_atoms();
    let g = Grid::new(inst, &atoms);
    Ok(
        solve_staircase(&g, thresholds, 0.0, inst.profit_floor(), config.tolerance)
            .map(|c| SolveResult::new(inst, c.policy, Method::ExactEnumeration, config.tolerance)),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::population::{DiscreteDistribution, Population};

    #[test]
    fn staircase_counts_match_binomial() {
        for (nv, nk) in [(1, 1), (2, 2), (3, 2), (4, 4), (2, 5)] {
            let n = staircases(nv, nk).len() as u128;
            assert_eq!(n + 1, staircase_count(nv, nk), "{nv}x{nk}");
        }
        assert_eq!(staircase_count(8, 8), 12_870);
    }

    #[test]
    fn staircases_are_upward_closed() {
        for t in staircases(3, 3) {
            assert!(t.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn point_mass_fine_matches_closed_form() {
        // v0 = 2, k = 3, R = 1: the binding fine solves ℓ(3, y) = 1.
        let pop = Population::new(
            DiscreteDistribution::point_mass(2.0).unwrap(),
            DiscreteDistribution::point_mass(3.0).unwrap(),
        )
        .unwrap();
        let inst = Instance::new(pop, 1.0).unwrap();
        let r = best_fine_policy_exact(&inst, &SolverConfig::default()).unwrap();
        let y = (3.0f64 - 1.0).exp() / 3.0;
        assert!((r.policy.y - y).abs() < 1e-12);
        assert!((r.externality() - 1.0 / (3.0 * y)).abs() < 1e-12);
        assert!(r.feasible);
    }
}
