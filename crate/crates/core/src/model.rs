//! Buyer best response and market aggregates.
//!
//! The risk of an item secured at level `x` is `e^{-x}`. A buyer of
//! effectiveness `k` facing fine `y` and mandated security `c` picks effort
//! `h` minimizing `h + y e^{-c-kh}`; everything else follows in closed form.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::population::{BuyerType, JointAtom, Population};

/// Absolute slack for utility signs and for `ln(yk)` against `c`.
pub const TIE_TOL: f64 = 1e-12;

/// A regulator triple: fine `y`, mandated security cost `c`, price `p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub y: f64,
    pub c: f64,
    pub p: f64,
}

impl Policy {
    pub fn new(y: f64, c: f64, p: f64) -> Result<Self> {
        let s = Self { y, c, p };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, x) in [("y", self.y), ("c", self.c), ("p", self.p)] {
            if !x.is_finite() || x < 0.0 {
                return Err(Error::InvalidPolicy(format!(
                    "{name} = {x} must be finite and nonnegative"
                )));
            }
        }
        Ok(())
    }

    pub fn fine(y: f64, p: f64) -> Self {
        Self { y, c: 0.0, p }
    }

    pub fn cost(c: f64, p: f64) -> Self {
        Self { y: 0.0, c, p }
    }

    pub fn is_fine_policy(&self) -> bool {
        self.c == 0.0
    }

    pub fn is_cost_policy(&self) -> bool {
        self.y == 0.0
    }

    pub fn is_simple(&self) -> bool {
        self.is_fine_policy() || self.is_cost_policy()
    }

    pub fn margin(&self) -> f64 {
        self.p - self.c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExternalityMode {
    /// Expected risk among purchasers.
    #[default]
    Conditional,
    /// Expected risk times the probability of purchase.
    Total,
}

impl std::str::FromStr for ExternalityMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "conditional" => Ok(Self::Conditional),
            "total" => Ok(Self::Total),
            other => Err(Error::Domain(format!("unknown externality mode {other:?}"))),
        }
    }
}

/// `true` when the buyer exerts strictly positive effort, i.e. `k > k0`.
pub fn exerts_effort(k: f64, y: f64, c: f64) -> bool {
    positive_effort(k, y, c)
}

fn positive_effort(k: f64, y: f64, c: f64) -> bool {
    y > 0.0 && k > 0.0 && log_yk(k, y) - c > TIE_TOL
}

// ln(yk) without forming yk, which overflows for the huge k used in examples.
fn log_yk(k: f64, y: f64) -> f64 {
    y.ln() + k.ln()
}

pub fn best_effort(k: f64, y: f64, c: f64) -> f64 {
    if positive_effort(k, y, c) {
        (log_yk(k, y) - c) / k
    } else {
        0.0
    }
}

pub fn risk_of(k: f64, y: f64, c: f64) -> f64 {
    if positive_effort(k, y, c) {
        (-log_yk(k, y)).exp()
    } else {
        (-c).exp()
    }
}

pub fn loss_of(k: f64, y: f64, c: f64) -> f64 {
    if positive_effort(k, y, c) {
        (log_yk(k, y) - c + 1.0) / k
    } else {
        y * (-c).exp()
    }
}

pub fn utility_of(t: BuyerType, s: &Policy) -> f64 {
    t.value - s.p - loss_of(t.efficiency, s.y, s.c)
}

/// Value left to the buyer after expected fines and effort.
pub fn post_value(t: BuyerType, s: &Policy) -> f64 {
    t.value - loss_of(t.efficiency, s.y, s.c)
}

/// `ℓ(k, s) - ℓ(k, s2)`.
pub fn policy_gap(k: f64, s: &Policy, s2: &Policy) -> f64 {
    loss_of(k, s.y, s.c) - loss_of(k, s2.y, s2.c)
}

/// Effectiveness thresholds `(k0, kh)`: effort is positive iff `k > k0`.
pub fn thresholds(s: &Policy) -> (f64, f64) {
    let k0 = if s.y == 0.0 {
        f64::INFINITY
    } else {
        (s.c - s.y.ln()).exp()
    };
    (k0, k0.max(1.0))
}

/// Purchase decision given utility. Indifference is resolved by `tie`.
pub fn purchase_fraction(utility: f64, tie: f64) -> f64 {
    if utility > TIE_TOL {
        1.0
    } else if utility < -TIE_TOL {
        0.0
    } else {
        tie
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BuyerOutcome {
    pub effort: f64,
    pub risk: f64,
    pub loss: f64,
    pub post_value: f64,
    pub utility: f64,
    pub purchase_fraction: f64,
}

pub fn buyer_outcome(t: BuyerType, s: &Policy, tie: f64) -> BuyerOutcome {
    let k = t.efficiency;
    let effort = best_effort(k, s.y, s.c);
    let risk = risk_of(k, s.y, s.c);
    let loss = loss_of(k, s.y, s.c);
    let post_value = t.value - loss;
    let utility = post_value - s.p;
    BuyerOutcome {
        effort,
        risk,
        loss,
        post_value,
        utility,
        purchase_fraction: purchase_fraction(utility, tie),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AtomOutcome {
    pub v: f64,
    pub k: f64,
    pub prob: f64,
    #[serde(flatten)]
    pub outcome: BuyerOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketOutcome {
    pub policy: Policy,
    pub mode: ExternalityMode,
    pub sale_prob: f64,
    pub profit: f64,
    pub externality: f64,
    pub per_atom: Vec<AtomOutcome>,
}

/// Aggregates without the per-atom rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub sale_prob: f64,
    pub profit: f64,
    /// Expected risk among purchasers; 0 when nobody buys.
    pub conditional: f64,
    /// Unconditional compromised mass.
    pub total: f64,
}

impl Summary {
    pub fn externality(&self, mode: ExternalityMode) -> f64 {
        match mode {
            ExternalityMode::Conditional => self.conditional,
            ExternalityMode::Total => self.total,
        }
    }
}

/// Aggregates over precomputed joint atoms.
pub fn summarize(atoms: &[JointAtom], s: &Policy, tie: f64) -> Summary {
    let mut sale = 0.0;
    let mut risky = 0.0;
    for a in atoms {
        let u = utility_of(a.buyer, s);
        let frac = purchase_fraction(u, tie);
        if frac > 0.0 {
            let mass = a.prob * frac;
            sale += mass;
            risky += mass * risk_of(a.buyer.efficiency, s.y, s.c);
        }
    }
    Summary {
        sale_prob: sale,
        profit: s.margin() * sale,
        conditional: if sale > 0.0 { risky / sale } else { 0.0 },
        total: risky,
    }
}

pub fn evaluate(pop: &Population, s: &Policy, mode: ExternalityMode) -> MarketOutcome {
    evaluate_with_tie(pop, s, mode, 1.0)
}

pub fn evaluate_with_tie(
    pop: &Population,
    s: &Policy,
    mode: ExternalityMode,
    tie: f64,
) -> MarketOutcome {
    let atoms = pop.product_atoms();
    let per_atom: Vec<AtomOutcome> = atoms
        .iter()
        .map(|a| AtomOutcome {
            v: a.buyer.value,
            k: a.buyer.efficiency,
            prob: a.prob,
            outcome: buyer_outcome(a.buyer, s, tie),
        })
        .collect();
    let summary = summarize(&atoms, s, tie);
    MarketOutcome {
        policy: *s,
        mode,
        sale_prob: summary.sale_prob,
        profit: summary.profit,
        externality: summary.externality(mode),
        per_atom,
    }
}
