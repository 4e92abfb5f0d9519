//! Finite buyer populations.
//!
//! A population is a product of two independent discrete marginals: buyer
//! values (money) and buyer effectiveness at turning effort into security.
//! Everything downstream enumerates the joint atoms exactly, so the number of
//! joint atoms is capped at [`MAX_JOINT_ATOMS`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hard cap on `|values| * |efficiencies|`.
pub const MAX_JOINT_ATOMS: usize = 10_000;

const PROB_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub point: f64,
    pub prob: f64,
}

/// A finitely supported distribution on the nonnegative reals.
///
/// Atoms are kept sorted by point with duplicates merged, so two
/// distributions with the same mass function compare equal.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscreteDistribution {
    atoms: Vec<Atom>,
}

impl DiscreteDistribution {
    /// Builds a distribution from `(point, prob)` pairs.
    ///
    /// Duplicate points are merged by adding their probabilities.
    pub fn new<I>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (f64, f64)>,
    {
        let mut atoms: Vec<Atom> = Vec::new();
        for (point, prob) in pairs {
            if !point.is_finite() || point < 0.0 {
                return Err(Error::InvalidDistribution(format!(
                    "point {point} must be finite and nonnegative"
                )));
            }
            if !prob.is_finite() || prob <= 0.0 || prob > 1.0 + PROB_SUM_TOL {
                return Err(Error::InvalidDistribution(format!(
                    "probability {prob} must lie in (0, 1]"
                )));
            }
            atoms.push(Atom { point, prob });
        }
        if atoms.is_empty() {
            return Err(Error::InvalidDistribution("no atoms".into()));
        }
        atoms.sort_by(|a, b| a.point.total_cmp(&b.point));
        let mut merged: Vec<Atom> = Vec::with_capacity(atoms.len());
        for atom in atoms {
            match merged.last_mut() {
                Some(last) if last.point == atom.point => last.prob += atom.prob,
                _ => merged.push(atom),
            }
        }
        let total: f64 = merged.iter().map(|a| a.prob).sum();
        if (total - 1.0).abs() > PROB_SUM_TOL {
            return Err(Error::InvalidDistribution(format!(
                "probabilities sum to {total}, expected 1"
            )));
        }
        Ok(Self { atoms: merged })
    }

    pub fn point_mass(point: f64) -> Result<Self> {
        Self::new([(point, 1.0)])
    }

    /// Midpoint discretization of the uniform distribution on `[lo, hi]`.
    pub fn uniform(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || lo < 0.0 || lo >= hi {
            return Err(Error::InvalidRange { lo, hi });
        }
        if n == 0 {
            return Err(Error::InvalidDistribution(
                "uniform discretization needs at least one cell".into(),
            ));
        }
        let width = (hi - lo) / n as f64;
        let prob = 1.0 / n as f64;
        Self::new((0..n).map(|i| (lo + (i as f64 + 0.5) * width, prob)))
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        self.atoms.iter().map(|a| a.point)
    }

    pub fn min_point(&self) -> f64 {
        self.atoms[0].point
    }

    pub fn max_point(&self) -> f64 {
        self.atoms[self.atoms.len() - 1].point
    }

    pub fn mean(&self) -> f64 {
        self.atoms.iter().map(|a| a.point * a.prob).sum()
    }

    /// `Pr[X >= x]`.
    pub fn survival(&self, x: f64) -> f64 {
        self.atoms
            .iter()
            .filter(|a| a.point >= x)
            .map(|a| a.prob)
            .sum()
    }

    /// First-order stochastic dominance: `Pr_self[X >= x] >= Pr_other[X >= x]` for all `x`.
    ///
    /// Both survival functions are step functions that only change at support
    /// points, so checking the union of supports is exhaustive.
    pub fn dominates(&self, other: &DiscreteDistribution) -> bool {
        self.points()
            .chain(other.points())
            .all(|x| self.survival(x) + PROB_SUM_TOL >= other.survival(x))
    }
}

/// One atom of the joint value-by-effectiveness distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BuyerType {
    pub value: f64,
    pub efficiency: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointAtom {
    pub buyer: BuyerType,
    pub prob: f64,
    /// Index into the value marginal.
    pub value_index: usize,
    /// Index into the efficiency marginal.
    pub efficiency_index: usize,
}

/// The product population `D_v x D_k`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Population {
    values: DiscreteDistribution,
    efficiencies: DiscreteDistribution,
}

impl Population {
    pub fn new(values: DiscreteDistribution, efficiencies: DiscreteDistribution) -> Result<Self> {
        let atoms = values.len() * efficiencies.len();
        if atoms > MAX_JOINT_ATOMS {
            return Err(Error::TooManyAtoms {
                atoms,
                limit: MAX_JOINT_ATOMS,
            });
        }
        Ok(Self {
            values,
            efficiencies,
        })
    }

    pub fn values(&self) -> &DiscreteDistribution {
        &self.values
    }

    pub fn efficiencies(&self) -> &DiscreteDistribution {
        &self.efficiencies
    }

    pub fn joint_len(&self) -> usize {
        self.values.len() * self.efficiencies.len()
    }

    /// Same values, different effectiveness marginal.
    pub fn with_efficiencies(&self, efficiencies: DiscreteDistribution) -> Result<Self> {
        Self::new(self.values.clone(), efficiencies)
    }

    /// Joint atoms in (value-ascending, efficiency-ascending) lexicographic order.
    pub fn product_atoms(&self) -> Vec<JointAtom> {
        let mut out = Vec::with_capacity(self.joint_len());
        for (vi, va) in self.values.atoms.iter().enumerate() {
            for (ki, ka) in self.efficiencies.atoms.iter().enumerate() {
                out.push(JointAtom {
                    buyer: BuyerType {
                        value: va.point,
                        efficiency: ka.point,
                    },
                    prob: va.prob * ka.prob,
                    value_index: vi,
                    efficiency_index: ki,
                });
            }
        }
        out
    }

    /// Highest profit reachable without regulation: `max_p p * Pr[v >= p]`.
    pub fn unregulated_optimum(&self) -> f64 {
        best_posted_price(&self.values).1
    }
}

/// Best posted price on a value distribution when buyers bear no loss and
/// the seller bears no cost. Ties go to the lower price.
pub(crate) fn best_posted_price(values: &DiscreteDistribution) -> (f64, f64) {
    let atoms = values.atoms();
    let mut best = (atoms[0].point, f64::NEG_INFINITY);
    let mut tail = 0.0;
    // Walk from the top so the survival mass accumulates in one pass.
    let mut scored: Vec<(f64, f64)> = Vec::with_capacity(atoms.len());
    for atom in atoms.iter().rev() {
        tail += atom.prob;
        scored.push((atom.point, atom.point * tail));
    }
    for &(price, profit) in scored.iter().rev() {
        if profit > best.1 {
            best = (price, profit);
        }
    }
    best
}

/// A population together with the seller's profit floor `R`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Instance {
    population: Population,
    profit_floor: f64,
}

/// Slack when checking a floor against the unregulated optimum.
const FLOOR_TOL: f64 = 1e-9;

impl Instance {
    pub fn new(population: Population, profit_floor: f64) -> Result<Self> {
        if !profit_floor.is_finite() || profit_floor <= 0.0 {
            return Err(Error::InvalidInstance(format!(
                "profit floor {profit_floor} must be positive"
            )));
        }
        let best = population.unregulated_optimum();
        if profit_floor > best + FLOOR_TOL {
            return Err(Error::Infeasible {
                floor: profit_floor,
                best,
            });
        }
        Ok(Self {
            population,
            profit_floor,
        })
    }

    pub fn population(&self) -> &Population {
        &self.population
    }

    pub fn profit_floor(&self) -> f64 {
        self.profit_floor
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: InstanceFile = serde_json::from_str(text)?;
        raw.into_instance()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&InstanceFile::from(self)).expect("instance serializes")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ValueAtomFile {
    v: f64,
    prob: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EfficiencyAtomFile {
    k: f64,
    prob: f64,
}

/// On-disk instance layout.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceFile {
    values: Vec<ValueAtomFile>,
    efficiencies: Vec<EfficiencyAtomFile>,
    profit_floor: f64,
}

impl InstanceFile {
    fn into_instance(self) -> Result<Instance> {
        let values = DiscreteDistribution::new(self.values.iter().map(|a| (a.v, a.prob)))?;
        let effs = DiscreteDistribution::new(self.efficiencies.iter().map(|a| (a.k, a.prob)))?;
        Instance::new(Population::new(values, effs)?, self.profit_floor)
    }
}

impl From<&Instance> for InstanceFile {
    fn from(inst: &Instance) -> Self {
        Self {
            values: inst
                .population
                .values
                .atoms
                .iter()
                .map(|a| ValueAtomFile {
                    v: a.point,
                    prob: a.prob,
                })
                .collect(),
            efficiencies: inst
                .population
                .efficiencies
                .atoms
                .iter()
                .map(|a| EfficiencyAtomFile {
                    k: a.point,
                    prob: a.prob,
                })
                .collect(),
            profit_floor: inst.profit_floor,
        }
    }
}
