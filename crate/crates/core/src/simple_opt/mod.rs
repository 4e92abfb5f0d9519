//! Externality-minimizing policies under a profit floor.
//!
//! Cost policies are solved in closed form. Fine policies are solved exactly by
//! purchase-set enumeration on small populations and by a log-grid otherwise.
//! General policies have no exact algorithm; a grid with local refinement is
//! used and its results are labelled as such.

mod exact;
mod grid;

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::{evaluate, ExternalityMode, MarketOutcome, Policy};
use crate::population::{DiscreteDistribution, Instance};

pub use exact::{
    best_fine_policy_exact, best_fine_policy_for_set, staircase_count, EXACT_ATOM_LIMIT,
};
pub use grid::{best_fine_policy_grid, best_general_policy_grid};

/// Largest fine any solver will emit.
pub const Y_CAP: f64 = 1e15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogGrid {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl LogGrid {
    pub fn points(&self) -> Vec<f64> {
        let (a, b) = (self.min.ln(), self.max.ln());
        let n = self.count;
        (0..n)
            .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearGrid {
    pub min: f64,
    /// `None` means the largest buyer value.
    pub max: Option<f64>,
    pub count: usize,
}

impl LinearGrid {
    pub fn points(&self, default_max: f64) -> Vec<f64> {
        let hi = self.max.unwrap_or(default_max);
        let n = self.count;
        (0..n)
            .map(|i| self.min + (hi - self.min) * i as f64 / (n - 1) as f64)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub y_grid: LogGrid,
    pub c_grid: LinearGrid,
    pub refine_iters: usize,
    /// Profit slack accepted as feasible.
    pub tolerance: f64,
    /// Seed the general search with the exact simple optima.
    pub warm_start: bool,
    pub execution: Execution,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            y_grid: LogGrid {
                min: 1e-4,
                max: 1e4,
                count: 400,
            },
            c_grid: LinearGrid {
                min: 0.0,
                max: None,
                count: 400,
            },
            refine_iters: 40,
            tolerance: 1e-9,
            warm_start: true,
            execution: Execution::default(),
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let y = &self.y_grid;
        if y.count < 2 || !(y.min > 0.0 && y.min < y.max && y.max.is_finite()) {
            return Err(Error::Domain(format!(
                "fine grid needs count >= 2 and 0 < min < max, got {y:?}"
            )));
        }
        let c = &self.c_grid;
        if c.count < 2 || c.min < 0.0 || c.max.is_some_and(|m| !(m > c.min && m.is_finite())) {
            return Err(Error::Domain(format!(
                "cost grid needs count >= 2 and 0 <= min < max, got {c:?}"
            )));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Domain("tolerance must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    ExactEnumeration,
    ClosedForm,
    Grid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    pub policy: Policy,
    pub outcome: MarketOutcome,
    pub feasible: bool,
    pub method: Method,
}

impl SolveResult {
    fn new(inst: &Instance, policy: Policy, method: Method, tol: f64) -> Self {
        let outcome = evaluate(inst.population(), &policy, ExternalityMode::Conditional);
        let feasible = outcome.profit >= inst.profit_floor() - tol;
        Self {
            policy,
            outcome,
            feasible,
            method,
        }
    }

    pub fn externality(&self) -> f64 {
        self.outcome.externality
    }
}

/// A feasible policy seen during a search, ordered by `(ext, y, c, p)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Candidate {
    pub policy: Policy,
    pub ext: f64,
}

impl Candidate {
    pub fn cmp_key(&self, other: &Self) -> Ordering {
        self.ext
            .total_cmp(&other.ext)
            .then(self.policy.y.total_cmp(&other.policy.y))
            .then(self.policy.c.total_cmp(&other.policy.c))
            .then(self.policy.p.total_cmp(&other.policy.p))
    }

    pub fn better(a: Option<Self>, b: Option<Self>) -> Option<Self> {
        match (a, b) {
            (Some(x), Some(y)) => Some(if y.cmp_key(&x) == Ordering::Less {
                y
            } else {
                x
            }),
            (x, None) => x,
            (None, y) => y,
        }
    }
}

/// Largest fine keeping `ℓ(k, y, c) <= loss`, given `loss >= 0`.
///
/// `ℓ` is `y e^{-c}` up to `yk = e^c` (where it equals `1/k`) and
/// `(ln(yk) - c + 1)/k` beyond, so the inverse is piecewise closed form.
pub fn max_fine_for_loss(k: f64, loss: f64, c: f64) -> f64 {
    debug_assert!(loss >= 0.0);
    let y = if k == 0.0 || loss * k <= 1.0 {
        loss * c.exp()
    } else {
        (k * loss - 1.0 + c - k.ln()).exp()
    };
    y.min(Y_CAP)
}

/// `Inv(s, α) = (y e^{(p-c)(1-α)}, αc + (1-α)p, p)`.
///
/// Buyer behavior is unchanged; profit scales by `α` and conditional
/// externality by `e^{-(1-α)(p-c)}`.
pub fn inv_transform(s: &Policy, alpha: f64) -> Result<Policy> {
    let margin = s.margin();
    let upper = if margin > 0.0 { s.p / margin } else { 1.0 };
    if !(alpha.is_finite() && alpha >= 0.0 && alpha <= upper * (1.0 + 1e-15)) {
        return Err(Error::Domain(format!(
            "alpha = {alpha} outside [0, {upper}]"
        )));
    }
    let y = s.y * (margin * (1.0 - alpha)).exp();
    let mut c = alpha * s.c + (1.0 - alpha) * s.p;
    // Cancellation at α = p/(p-c) leaves rounding noise around zero.
    if c.abs() <= 1e-12 * s.p.max(1.0) {
        c = 0.0;
    }
    Ok(Policy { y, c, p: s.p })
}

/// `c*`: the largest mandated cost for which some price still earns `floor`.
///
/// Returns `(c*, witnessing price)`; among equal `c*` the lower price wins.
pub fn c_star_with_price(values: &DiscreteDistribution, floor: f64) -> Result<(f64, f64)> {
    let atoms = values.atoms();
    let mut tail = 0.0;
    let mut best: Option<(f64, f64)> = None;
    for atom in atoms.iter().rev() {
        tail += atom.prob;
        let c = atom.point - floor / tail;
        match best {
            Some((bc, _)) if c < bc => {}
            _ => best = Some((c, atom.point)),
        }
    }
    let (c, p) = best.expect("distribution is nonempty");
    let slack = 1e-9 * floor.max(1.0);
    if c < -slack {
        let (_, top) = crate::population::best_posted_price(values);
        return Err(Error::Infeasible { floor, best: top });
    }
    Ok((c.max(0.0), p))
}

pub fn c_star(values: &DiscreteDistribution, floor: f64) -> Result<f64> {
    c_star_with_price(values, floor).map(|(c, _)| c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cutoff {
    pub c_star: f64,
    /// `1 + 1/c*`; infinite when `c* = 0`.
    pub t: f64,
    pub unbounded: bool,
}

pub fn cutoff_t(values: &DiscreteDistribution, floor: f64) -> Result<Cutoff> {
    let c = c_star(values, floor)?;
    Ok(if c > 0.0 {
        Cutoff {
            c_star: c,
            t: 1.0 + 1.0 / c,
            unbounded: false,
        }
    } else {
        Cutoff {
            c_star: 0.0,
            t: f64::INFINITY,
            unbounded: true,
        }
    })
}

/// Best cost policy. Nobody bears any loss when `y = 0`, so the optimum is
/// `(0, c*, p*)` with externality `e^{-c*}`.
pub fn best_cost_policy(inst: &Instance, config: &SolverConfig) -> Result<SolveResult> {
    let (c, p) = c_star_with_price(inst.population().values(), inst.profit_floor())?;
    Ok(SolveResult::new(
        inst,
        Policy::cost(c, p),
        Method::ClosedForm,
        config.tolerance,
    ))
}

pub fn best_fine_policy(inst: &Instance, config: &SolverConfig) -> Result<SolveResult> {
    config.validate()?;
    if inst.population().joint_len() <= EXACT_ATOM_LIMIT {
        best_fine_policy_exact(inst, config)
    } else {
        best_fine_policy_grid(inst, config)
    }
}

/// Grid search over `(y, c)` with local refinement.
///
/// With `warm_start` the exact simple optima join the candidate pool, so the
/// result is never worse than the best simple policy.
pub fn best_general_policy(inst: &Instance, config: &SolverConfig) -> Result<SolveResult> {
    config.validate()?;
    let mut best = best_general_policy_grid(inst, config)?;
    if config.warm_start {
        for seed in [
            best_cost_policy(inst, config)?,
            best_fine_policy(inst, config)?,
        ] {
            if seed.feasible {
                let a = Candidate {
                    policy: best.policy,
                    ext: best.externality(),
                };
                let b = Candidate {
                    policy: seed.policy,
                    ext: seed.externality(),
                };
                if !best.feasible || b.cmp_key(&a) == Ordering::Less {
                    best = seed;
                }
            }
        }
    }
    best.method = Method::Grid;
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::population::Population;

    fn values(pairs: &[(f64, f64)]) -> DiscreteDistribution {
        DiscreteDistribution::new(pairs.iter().copied()).unwrap()
    }

    #[test]
    fn c_star_examples() {
        let d = values(&[(1.0, 0.5), (16.0 / 15.0, 0.5)]);
        assert!((c_star(&d, 0.5).unwrap() - 0.5).abs() < 1e-15);
        let cut = cutoff_t(&d, 0.5).unwrap();
        assert_eq!(cut.t, 3.0);

        let point = DiscreteDistribution::point_mass(2.0).unwrap();
        assert_eq!(c_star(&point, 1.0).unwrap(), 1.0);
        assert_eq!(cutoff_t(&point, 1.0).unwrap().t, 2.0);
        assert_eq!(c_star(&point, 2.0).unwrap(), 0.0);
        assert!(cutoff_t(&point, 2.0).unwrap().unbounded);
        assert!(matches!(c_star(&point, 2.5), Err(Error::Infeasible { .. })));
    }

    #[test]
    fn cutoff_increases_with_floor() {
        let d = values(&[(1.0, 0.3), (2.0, 0.3), (4.0, 0.4)]);
        let ts: Vec<f64> = [0.2, 0.5, 0.8, 1.1, 1.4]
            .iter()
            .map(|&r| cutoff_t(&d, r).unwrap().t)
            .collect();
        assert!(ts.windows(2).all(|w| w[0] < w[1]), "{ts:?}");
    }

    #[test]
    fn inv_transform_examples() {
        let s = Policy {
            y: 1.0,
            c: 0.0,
            p: 2.0,
        };
        assert_eq!(inv_transform(&s, 1.0).unwrap(), s);
        let half = inv_transform(&s, 0.5).unwrap();
        assert!((half.y - std::f64::consts::E).abs() < 1e-15);
        assert_eq!((half.c, half.p), (1.0, 2.0));

        let s = Policy {
            y: 0.7,
            c: 0.9,
            p: 2.3,
        };
        let a = s.p / s.margin();
        let fine = inv_transform(&s, a).unwrap();
        assert_eq!(fine.c, 0.0);
        assert!((fine.y - 0.7 * (-0.9f64).exp()).abs() < 1e-14);
        assert!(inv_transform(&s, a * 1.01).is_err());
        assert!(inv_transform(&s, -0.1).is_err());
    }

    #[test]
    fn inverse_loss_round_trips() {
        for &k in &[0.0, 0.3, 1.0, 2.5, 40.0] {
            for &c in &[0.0, 0.4, 2.0] {
                for &l in &[0.0, 0.05, 0.4, 0.9] {
                    let y = max_fine_for_loss(k, l, c);
                    let back = crate::model::loss_of(k, y, c);
                    assert!((back - l).abs() < 1e-12, "k={k} c={c} l={l} got {back}");
                }
            }
        }
    }

    #[test]
    fn best_cost_policy_examples() {
        let pop = Population::new(
            values(&[(1.0, 0.5), (16.0 / 15.0, 0.5)]),
            values(&[(3.0, 0.5), (1e6, 0.5)]),
        )
        .unwrap();
        let inst = Instance::new(pop.clone(), 0.5).unwrap();
        let r = best_cost_policy(&inst, &SolverConfig::default()).unwrap();
        assert!((r.policy.c - 0.5).abs() < 1e-15);
        assert!((r.externality() - (-0.5f64).exp()).abs() < 1e-15);
        assert!(r.feasible);

        let top = pop.unregulated_optimum();
        let inst = Instance::new(pop, top).unwrap();
        let r = best_cost_policy(&inst, &SolverConfig::default()).unwrap();
        assert_eq!(r.policy.c, 0.0);
        assert_eq!(r.externality(), 1.0);
    }
}
