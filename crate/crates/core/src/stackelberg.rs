//! Profit-maximizing seller: the regulator fixes `(y, c)` and the seller
//! best-responds with a price. Externality is the unconditional compromised
//! mass.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{evaluate, loss_of, ExternalityMode, MarketOutcome, Policy, TIE_TOL};
use crate::population::Population;

/// One buyer type with its post-regulation value and the seller's payoff
/// from pricing exactly at it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RevenueRow {
    pub value_index: usize,
    pub efficiency_index: usize,
    pub v: f64,
    pub k: f64,
    pub prob: f64,
    pub post_value: f64,
    /// `Pr[post value >= this row's post value]`.
    pub sale_prob: f64,
    /// `post_value * sale_prob`.
    pub revenue: f64,
    /// `(post_value - c) * sale_prob`.
    pub profit: f64,
}

/// Revenue rows in the induced type order: post value ascending, ties by
/// value then effectiveness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevenueTable {
    pub y: f64,
    pub c: f64,
    pub rows: Vec<RevenueRow>,
}

fn check_regulation(y: f64, c: f64) -> Result<()> {
    if !(y.is_finite() && y >= 0.0 && c.is_finite() && c >= 0.0) {
        return Err(Error::InvalidPolicy(format!(
            "fine {y} and cost {c} must be finite and nonnegative"
        )));
    }
    Ok(())
}

pub fn revenue_table(pop: &Population, y: f64, c: f64) -> Result<RevenueTable> {
    check_regulation(y, c)?;
    let mut rows: Vec<RevenueRow> = pop
        .product_atoms()
        .into_iter()
        .map(|a| {
            let post_value = a.buyer.value - loss_of(a.buyer.efficiency, y, c);
            RevenueRow {
                value_index: a.value_index,
                efficiency_index: a.efficiency_index,
                v: a.buyer.value,
                k: a.buyer.efficiency,
                prob: a.prob,
                post_value,
                sale_prob: 0.0,
                revenue: 0.0,
                profit: 0.0,
            }
        })
        .collect();
    rows.sort_by(|a, b| {
        a.post_value
            .total_cmp(&b.post_value)
            .then(a.v.total_cmp(&b.v))
            .then(a.k.total_cmp(&b.k))
    });

    // Suffix mass; `lo` walks down to the first row within tolerance so
    // indifferent buyers count as purchasers.
    let n = rows.len();
    let mut tail = vec![0.0; n + 1];
    for i in (0..n).rev() {
        tail[i] = tail[i + 1] + rows[i].prob;
    }
    let mut lo = 0;
    for i in 0..n {
        while rows[lo].post_value < rows[i].post_value - TIE_TOL {
            lo += 1;
        }
        let sale_prob = tail[lo];
        let row = &mut rows[i];
        row.sale_prob = sale_prob;
        row.revenue = row.post_value * sale_prob;
        row.profit = (row.post_value - c) * sale_prob;
    }
    Ok(RevenueTable { y, c, rows })
}

/// The seller's best response.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BestResponse {
    pub price: f64,
    pub profit: f64,
    pub sale_prob: f64,
    /// False when every post value is below the cost and the seller exits.
    pub sells: bool,
}

impl RevenueTable {
    /// Argmax of seller profit over the post values, ties toward the lower price.
    ///
    /// Prices off the post-value set are dominated, so the scan is exact.
    pub fn best_response(&self) -> BestResponse {
        let mut best: Option<&RevenueRow> = None;
        for row in self.rows.iter().filter(|r| r.post_value >= self.c) {
            best = match best {
                Some(b) if row.profit.partial_cmp(&b.profit) != Some(Ordering::Greater) => Some(b),
                _ => Some(row),
            };
        }
        match best {
            Some(r) => BestResponse {
                price: r.post_value,
                profit: r.profit,
                sale_prob: r.sale_prob,
                sells: true,
            },
            // At price c nobody has nonnegative utility, so nothing sells.
            None => BestResponse {
                price: self.c,
                profit: 0.0,
                sale_prob: 0.0,
                sells: false,
            },
        }
    }

    /// `(value_index, efficiency_index)` of every type buying at `price`.
    pub fn buyers_at(&self, price: f64) -> Vec<(usize, usize)> {
        let mut out: Vec<(usize, usize)> = self
            .rows
            .iter()
            .filter(|r| r.post_value >= price - TIE_TOL)
            .map(|r| (r.value_index, r.efficiency_index))
            .collect();
        out.sort_unstable();
        out
    }

    pub fn row(&self, value_index: usize, efficiency_index: usize) -> Option<&RevenueRow> {
        self.rows
            .iter()
            .find(|r| r.value_index == value_index && r.efficiency_index == efficiency_index)
    }
}

pub fn seller_best_price(pop: &Population, y: f64, c: f64) -> Result<BestResponse> {
    Ok(revenue_table(pop, y, c)?.best_response())
}

/// `y(k) = e^{k/(k-1)} / (e k)`, the fine at which `ℓ(k, y(k), 0) = 1/(k-1)`.
pub fn y_of_k(k: f64) -> Result<f64> {
    if !(k.is_finite() && k > 1.0) {
        return Err(Error::Domain(format!("y(k) needs k > 1, got {k}")));
    }
    Ok((1.0 / (k - 1.0)).exp() / k)
}

/// Market outcome at the seller's best-response price, total externality.
pub fn stackelberg_evaluate(pop: &Population, y: f64, c: f64) -> Result<MarketOutcome> {
    let br = seller_best_price(pop, y, c)?;
    Ok(evaluate(
        pop,
        &Policy { y, c, p: br.price },
        ExternalityMode::Total,
    ))
}
