//! Seller profit over a `(fine, cost)` grid at the profit-maximizing price.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{map_indexed, Execution};
use crate::model::{evaluate, loss_of, ExternalityMode, Policy};
use crate::population::{DiscreteDistribution, Population};
use crate::stackelberg::seller_best_price;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSpec {
    pub values: DiscreteDistribution,
    pub efficiencies: DiscreteDistribution,
    pub fines: Vec<f64>,
    pub costs: Vec<f64>,
    pub mode: ExternalityMode,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, grid) in [("fine", &self.fines), ("cost", &self.costs)] {
            if grid.is_empty() {
                return Err(Error::Domain(format!("{name} grid is empty")));
            }
            if let Some(bad) = grid.iter().find(|g| !(g.is_finite() && **g >= 0.0)) {
                return Err(Error::Domain(format!(
                    "{name} grid entry {bad} must be finite and nonnegative"
                )));
            }
        }
        Ok(())
    }
}

/// One CSV row; field order is the output column order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub y: f64,
    pub c: f64,
    pub best_price: f64,
    pub profit: f64,
    pub externality: f64,
}

pub const SWEEP_HEADER: [&str; 5] = ["y", "c", "best_price", "profit", "externality"];

/// Rows in `(fine, cost)` order, fines outermost.
pub fn run_sweep(spec: &SweepSpec, exec: Execution) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    let pop = Population::new(spec.values.clone(), spec.efficiencies.clone())?;
    let nc = spec.costs.len();
    map_indexed(spec.fines.len() * nc, exec, |idx| {
        let (y, c) = (spec.fines[idx / nc], spec.costs[idx % nc]);
        let br = seller_best_price(&pop, y, c)?;
        let out = evaluate(&pop, &Policy { y, c, p: br.price }, spec.mode);
        Ok(SweepRow {
            y,
            c,
            best_price: br.price,
            profit: br.profit,
            externality: out.externality,
        })
    })
    .into_iter()
    .collect()
}

/// Cost with the highest seller profit at fine `y`; ties go to the lower cost.
pub fn most_profitable_cost(rows: &[SweepRow], y: f64) -> Option<f64> {
    rows.iter()
        .filter(|r| r.y == y)
        .fold(None::<&SweepRow>, |best, r| match best {
            Some(b) if r.profit <= b.profit => Some(b),
            _ => Some(r),
        })
        .map(|r| r.c)
}

/// Central difference of `ℓ(k, y, c) + c` in `c`. On the effort branch this
/// is `1 - 1/k`; without effort it is `1 - y e^{-c}`.
pub fn loss_plus_cost_slope(k: f64, y: f64, c: f64, h: f64) -> f64 {
    let f = |cc: f64| loss_of(k, y, cc) + cc;
    (f(c + h) - f(c - h)) / (2.0 * h)
}
