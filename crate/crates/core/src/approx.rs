//! Bicriterion approximation: any policy `s` with positive sales becomes a
//! simple policy keeping at least 1/8 of the profit at no more than 40/3 times
//! the externality.
//!
//! Purchasers under `s` split into three classes: zero effort (`eps1`),
//! positive effort with `k <= 1` (`eps2`) and positive effort with `k > 1`
//! (`eps3`). The first two are served by a cost policy that shifts the price
//! by a common loss; the third goes through [`fine_routine`].
//!
//! All blowup, heavy and `Cost³` quantities in the fine routine are computed on
//! `s~ = Inv(s, 1/2)`, which has the same purchase set, the same `k0` and the
//! same `y e^{-c}` as `s`. The blowup predicate on the raw `s` is kept in the
//! trace as a diagnostic only.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    exerts_effort, purchase_fraction, risk_of, summarize, thresholds, utility_of, Policy, TIE_TOL,
};
use crate::population::{JointAtom, Population};
use crate::simple_opt::inv_transform;

/// Number of log-spaced risk levels scanned for a good `Cost³ₓ`.
pub const COST3_SCAN: usize = 512;

const Y_PROBE_CAP: f64 = 1e300;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonPartition {
    pub eps1: f64,
    pub eps2: f64,
    pub eps3: f64,
}

fn purchasing<'a>(atoms: &'a [JointAtom], s: &Policy) -> impl Iterator<Item = JointAtom> + 'a {
    let s = *s;
    atoms
        .iter()
        .filter(move |a| purchase_fraction(utility_of(a.buyer, &s), 1.0) > 0.0)
        .copied()
}

fn sale_prob(atoms: &[JointAtom], s: &Policy) -> f64 {
    summarize(atoms, s, 1.0).sale_prob
}

pub fn epsilon_partition(pop: &Population, s: &Policy) -> Result<EpsilonPartition> {
    partition_atoms(&pop.product_atoms(), s)
}

fn partition_atoms(atoms: &[JointAtom], s: &Policy) -> Result<EpsilonPartition> {
    let (mut m1, mut m2, mut m3) = (0.0, 0.0, 0.0);
    for a in purchasing(atoms, s) {
        let k = a.buyer.efficiency;
        if !exerts_effort(k, s.y, s.c) {
            m1 += a.prob;
        } else if k <= 1.0 {
            m2 += a.prob;
        } else {
            m3 += a.prob;
        }
    }
    let total = m1 + m2 + m3;
    if total <= 0.0 {
        return Err(Error::ZeroSaleProbability);
    }
    Ok(EpsilonPartition {
        eps1: m1 / total,
        eps2: m2 / total,
        eps3: m3 / total,
    })
}

/// `Cost¹(s, ε) = (0, c + L, p + L)` with `L` the common loss shift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cost1Result {
    pub policy: Policy,
    /// Fraction of the boundary value atom that buys.
    pub tie_fraction: f64,
    pub loss_shift: f64,
    /// Effectiveness whose loss under `s` equals the shift, when one exists.
    pub sigma: Option<f64>,
    /// The shift exceeds every loss under `s` (only possible for `ε < 1`).
    pub beyond_loss_curve: bool,
}

/// Largest shift `L` with `Pr[v > p + L] + tie·Pr[v = p + L] = ε·Pr[A(s)]`.
///
/// When the sale mass is flat around the top of the loss curve the shift is
/// pulled down to `y e^{-c}`, so a cost policy maps to itself at `ε = 1`.
pub fn cost1(pop: &Population, s: &Policy, eps: f64) -> Result<Cost1Result> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::Domain(format!("eps = {eps} must lie in (0, 1]")));
    }
    let atoms = pop.product_atoms();
    let base = sale_prob(&atoms, s);
    if base <= 0.0 {
        return Err(Error::ZeroSaleProbability);
    }
    let target = eps * base;
    let values = pop.values().atoms();

    let mut above = 0.0;
    let mut pick = None;
    for (idx, atom) in values.iter().enumerate().rev() {
        if above + atom.prob >= target * (1.0 - 1e-15) {
            pick = Some(idx);
            break;
        }
        above += atom.prob;
    }
    let j = pick.expect("target never exceeds total mass");
    let mut tie = ((target - above) / values[j].prob).clamp(0.0, 1.0);
    if tie > 1.0 - 1e-12 {
        tie = 1.0;
    }
    let l_hi = (values[j].point - s.p).max(0.0);
    let lower_end = if j > 0 {
        values[j - 1].point - s.p
    } else {
        f64::NEG_INFINITY
    };
    let l_max = s.y * (-s.c).exp();

    let (shift, tie, beyond) = if l_hi <= l_max {
        (l_hi, tie, false)
    } else if tie == 1.0 && l_max > lower_end + TIE_TOL {
        (l_max, 1.0, false)
    } else {
        (l_hi, tie, true)
    };
    let policy = Policy {
        y: 0.0,
        c: s.c + shift,
        p: s.p + shift,
    };
    let sigma = if beyond {
        None
    } else {
        sigma_for_loss(s, shift)
    };
    Ok(Cost1Result {
        policy,
        tie_fraction: tie,
        loss_shift: shift,
        sigma,
        beyond_loss_curve: beyond,
    })
}

/// Smallest `k` with `ℓ(k, s) <= loss`.
fn sigma_for_loss(s: &Policy, loss: f64) -> Option<f64> {
    let l = |k: f64| crate::model::loss_of(k, s.y, s.c);
    if l(0.0) <= loss {
        return Some(0.0);
    }
    let (k0, _) = thresholds(s);
    let mut hi = k0.max(1.0);
    let mut steps = 0;
    while l(hi) > loss {
        hi *= 2.0;
        steps += 1;
        if steps > 2000 || !hi.is_finite() {
            return None;
        }
    }
    let mut lo = k0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if l(mid) > loss {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlowupResult {
    pub sigma: f64,
    pub q: f64,
    pub y_sk: f64,
    /// `ln y_sk` before any capping.
    pub ln_y_sk: f64,
    pub k_bar: f64,
    pub policy: Policy,
    /// Share of the buyers indifferent at `q` that still buy, chosen so that
    /// sales under the blowup equal sales under `s`.
    pub tie_fraction: f64,
    /// `y_sk` exceeded the largest representable fine and was capped.
    pub q_capped: bool,
}

/// `Blowup(s) = (q y e^{c(σ-1)}, 0, p - c)`.
///
/// `q` is the smallest multiplier `x >= 1` at which sales under the probe
/// `(x y e^{c(σ-1)}, 0, p - c)` fall to at most the sales under `s`. Sales
/// are a step function of `x`, so `q` is the jump point itself, found in
/// closed form; the buyers indifferent there are split by `tie_fraction`.
pub fn blowup(pop: &Population, s: &Policy, beta: f64) -> Result<BlowupResult> {
    blowup_atoms(&pop.product_atoms(), s, beta)
}

fn blowup_atoms(atoms: &[JointAtom], s: &Policy, beta: f64) -> Result<BlowupResult> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::Domain(format!("beta = {beta} must lie in (0, 1)")));
    }
    let (_, kh) = thresholds(s);
    let mut high: Vec<(f64, f64)> = purchasing(atoms, s)
        .filter(|a| a.buyer.efficiency > kh && exerts_effort(a.buyer.efficiency, s.y, s.c))
        .map(|a| (a.buyer.efficiency, a.prob))
        .collect();
    let mass: f64 = high.iter().map(|h| h.1).sum();
    if mass <= 0.0 {
        return Err(Error::Precondition(
            "no purchaser exerts effort with k > max(1, k0)".into(),
        ));
    }
    high.sort_by(|a, b| a.0.total_cmp(&b.0));
    let level = 1.0 - beta;
    let mut cum = 0.0;
    let mut quantile = high[high.len() - 1].0;
    for &(k, prob) in &high {
        cum += prob / mass;
        if cum >= level - 1e-12 {
            quantile = k;
            break;
        }
    }
    let sigma = quantile.max(1.0);

    // Work with ln(base): e^{c(σ-1)} overflows for the huge σ of
    // heavy-tailed effectiveness distributions.
    let ln_base = s.y.ln() + s.c * (sigma - 1.0);
    let target = sale_prob(atoms, s);
    let probe_price = s.margin();

    // A buyer with post-probe slack `v - (p - c)` keeps buying while
    // ln x <= ln(leave fine) - ln(base); sales are a step function of x.
    let mut jumps: Vec<(f64, f64)> = atoms
        .iter()
        .filter_map(|a| {
            let slack = a.buyer.value - probe_price;
            if slack < -TIE_TOL {
                return None;
            }
            let ln_x = ln_leave_fine(a.buyer.efficiency, slack.max(0.0)) - ln_base;
            (ln_x >= -TIE_TOL).then_some((ln_x.max(0.0), a.prob))
        })
        .collect();
    jumps.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut remaining: f64 = jumps.iter().map(|j| j.1).sum();

    let (mut ln_q, mut tie) = (0.0, 1.0);
    if remaining > target + TIE_TOL {
        let mut i = 0;
        while i < jumps.len() {
            let x = jumps[i].0;
            let mut at = 0.0;
            while i < jumps.len() && jumps[i].0 <= x + 1e-15 * x.abs().max(1.0) {
                at += jumps[i].1;
                i += 1;
            }
            let strict = remaining - at;
            if strict <= target + TIE_TOL {
                ln_q = x;
                tie = ((target - strict) / at).clamp(0.0, 1.0);
                break;
            }
            remaining = strict;
        }
    }
    let ln_y_sk = ln_q + ln_base;
    let capped = !(ln_y_sk.exp() <= Y_PROBE_CAP);
    let y_sk = if capped { Y_PROBE_CAP } else { ln_y_sk.exp() };
    let k_bar = (s.c - y_sk.ln()).exp();
    Ok(BlowupResult {
        sigma,
        q: ln_q.exp().min(f64::MAX),
        y_sk,
        ln_y_sk,
        k_bar,
        policy: Policy {
            y: y_sk,
            c: 0.0,
            p: probe_price,
        },
        tie_fraction: if capped { 1.0 } else { tie },
        q_capped: capped,
    })
}

/// `ln` of the fine at which `ℓ(k, y, 0)` reaches `slack`.
fn ln_leave_fine(k: f64, slack: f64) -> f64 {
    if k == 0.0 || slack * k <= 1.0 {
        slack.ln()
    } else {
        k * slack - 1.0 - k.ln()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Goodness {
    pub good: bool,
    /// Quantity compared against the threshold.
    pub value: f64,
    pub threshold: f64,
}

/// Good blowup: `E[risk · 1{k <= k̄} | A(Blowup)] <= n · Ext(s)` with
/// `n = 4(p - c) / ((1 - β)(1 + c) eps3)`.
pub fn blowup_good(pop: &Population, s: &Policy, beta: f64, br: &BlowupResult) -> Result<Goodness> {
    blowup_good_atoms(&pop.product_atoms(), s, beta, br)
}

fn blowup_good_atoms(
    atoms: &[JointAtom],
    s: &Policy,
    beta: f64,
    br: &BlowupResult,
) -> Result<Goodness> {
    let eps3 = partition_atoms(atoms, s)?.eps3;
    let base = summarize(atoms, s, 1.0);
    let n = 4.0 * s.margin() / ((1.0 - beta) * (1.0 + s.c) * eps3);
    let threshold = n * base.conditional;
    let (mut sold, mut low_risk) = (0.0, 0.0);
    for a in atoms {
        let frac = purchase_fraction(utility_of(a.buyer, &br.policy), br.tie_fraction);
        sold += a.prob * frac;
        if a.buyer.efficiency <= br.k_bar * (1.0 + 1e-12) {
            low_risk += a.prob * frac * risk_of(a.buyer.efficiency, br.policy.y, 0.0);
        }
    }
    let value = if sold > 0.0 { low_risk / sold } else { 0.0 };
    Ok(Goodness {
        good: value <= threshold,
        value,
        threshold,
    })
}

/// `Heavy(s) = (0, p_H/2, p_H)` with `p_H = ℓ(k̄, Blowup(s)) = (1 + c)/k̄`.
pub fn heavy(s: &Policy, br: &BlowupResult) -> Policy {
    let p_h = (1.0 + s.c) / br.k_bar;
    Policy {
        y: 0.0,
        c: 0.5 * p_h,
        p: p_h,
    }
}

/// `ℓ^risk(x, y) = (ln(1/x) + 1) x y`: the loss of the buyer whose risk is `x`
/// under the fine policy `(y, 0)`.
pub fn loss_from_risk(x: f64, y: f64) -> Result<f64> {
    if !(x > 0.0 && x <= 1.0) {
        return Err(Error::Domain(format!("risk level {x} must lie in (0, 1]")));
    }
    Ok(((1.0 / x).ln() + 1.0) * x * y)
}

/// `H(x) = Pr[v >= ℓ^risk(x, y_sk)]`.
pub fn sale_curve_h(pop: &Population, br: &BlowupResult, x: f64) -> Result<f64> {
    let level = loss_from_risk(x, br.y_sk)?;
    Ok(pop
        .values()
        .atoms()
        .iter()
        .filter(|a| a.point - level >= -TIE_TOL)
        .map(|a| a.prob)
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cost3 {
    pub policy: Policy,
    /// `ln y < 0` was clamped to a zero cost.
    pub clamped: bool,
}

/// `Cost³ₓ(s) = (0, ln y, ℓ^risk(x, y_sk))`.
pub fn cost3(s: &Policy, br: &BlowupResult, x: f64) -> Result<Cost3> {
    let price = loss_from_risk(x, br.y_sk)?;
    let raw = s.y.ln();
    Ok(Cost3 {
        policy: Policy {
            y: 0.0,
            c: raw.max(0.0),
            p: price,
        },
        clamped: !(raw >= 0.0),
    })
}

/// Good `Cost³ₓ`: `H(x) >= 2 β eps3 Prof(s) / ℓ^risk(x, y_sk)`.
pub fn cost3_good(
    pop: &Population,
    s: &Policy,
    beta: f64,
    br: &BlowupResult,
    x: f64,
) -> Result<Goodness> {
    cost3_good_with(pop, &pop.product_atoms(), s, beta, br, x)
}

fn cost3_good_with(
    pop: &Population,
    atoms: &[JointAtom],
    s: &Policy,
    beta: f64,
    br: &BlowupResult,
    x: f64,
) -> Result<Goodness> {
    let eps3 = partition_atoms(atoms, s)?.eps3;
    let profit = summarize(atoms, s, 1.0).profit;
    let h = sale_curve_h(pop, br, x)?;
    let threshold = 2.0 * beta * eps3 * profit / loss_from_risk(x, br.y_sk)?;
    Ok(Goodness {
        good: h >= threshold,
        value: h,
        threshold,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    #[serde(rename = "Cost1-full")]
    Cost1Full,
    #[serde(rename = "Cost1-eps12")]
    Cost1Eps12,
    #[serde(rename = "Fine-Inv")]
    FineInv,
    #[serde(rename = "Fine-BlowupGood")]
    FineBlowupGood,
    #[serde(rename = "Fine-Heavy")]
    FineHeavy,
    #[serde(rename = "Fine-Cost1")]
    FineCost1,
    #[serde(rename = "Fine-Cost3")]
    FineCost3,
    #[serde(rename = "Fine-BlowupFallback")]
    FineBlowupFallback,
}

/// Every predicate evaluated on the way to the output.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub blowup_good: Option<Goodness>,
    /// Same predicate on the untransformed policy; not used for branching.
    pub raw_blowup_good: Option<Goodness>,
    pub sigma_at_least_two: Option<bool>,
    pub cost3_good: Option<Goodness>,
    pub y_exp_neg_c: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApproxTrace {
    pub input: Policy,
    pub partition: EpsilonPartition,
    pub branch: Branch,
    pub beta: f64,
    /// `Inv(s, 1/2)`, when the fine routine needed it.
    pub transformed: Option<Policy>,
    pub blowup: Option<BlowupResult>,
    pub cost1: Option<Cost1Result>,
    pub chosen_x: Option<f64>,
    pub thresholds: Thresholds,
    pub warnings: Vec<String>,
    pub output: Policy,
    /// Tie fraction to evaluate the output with.
    pub tie_fraction: f64,
}

fn risk_grid(c: f64) -> Vec<f64> {
    let lo = -c;
    (0..COST3_SCAN)
        .map(|i| (lo * (1.0 - i as f64 / (COST3_SCAN - 1) as f64)).exp())
        .collect()
}

fn fine_trace(
    pop: &Population,
    atoms: &[JointAtom],
    s: &Policy,
    beta: f64,
    partition: EpsilonPartition,
) -> Result<ApproxTrace> {
    if !(s.p > s.c) {
        return Err(Error::Precondition(format!(
            "fine routine needs p > c, got p = {}, c = {}",
            s.p, s.c
        )));
    }
    let mut trace = ApproxTrace {
        input: *s,
        partition,
        branch: Branch::FineInv,
        beta,
        transformed: None,
        blowup: None,
        cost1: None,
        chosen_x: None,
        thresholds: Thresholds::default(),
        warnings: Vec::new(),
        output: *s,
        tie_fraction: 1.0,
    };
    if s.c <= 1.0 {
        trace.output = inv_transform(s, s.p / s.margin())?;
        return Ok(trace);
    }

    let st = inv_transform(s, 0.5)?;
    trace.transformed = Some(st);
    let br = blowup_atoms(atoms, &st, beta)?;
    if br.q_capped {
        trace
            .warnings
            .push("blowup fine exceeds 1e300 and was capped".into());
    }
    trace.blowup = Some(br);
    let good = blowup_good_atoms(atoms, &st, beta, &br)?;
    trace.thresholds.blowup_good = Some(good);
    if let Ok(raw) = blowup_atoms(atoms, s, beta) {
        trace.thresholds.raw_blowup_good = blowup_good_atoms(atoms, s, beta, &raw).ok();
    }
    if good.good {
        trace.branch = Branch::FineBlowupGood;
        trace.output = br.policy;
        trace.tie_fraction = br.tie_fraction;
        return Ok(trace);
    }
    let tail = br.sigma >= 2.0;
    trace.thresholds.sigma_at_least_two = Some(tail);
    if tail {
        trace.branch = Branch::FineHeavy;
        trace.output = heavy(&st, &br);
        return Ok(trace);
    }

    // Among good risk levels keep the most profitable Cost³ₓ.
    let mut found: Option<(f64, Goodness, Cost3, f64)> = None;
    for x in risk_grid(st.c) {
        let g = cost3_good_with(pop, atoms, &st, beta, &br, x)?;
        if !g.good {
            continue;
        }
        let c3 = cost3(&st, &br, x)?;
        let profit = summarize(atoms, &c3.policy, 1.0).profit;
        if found.as_ref().is_none_or(|f| profit > f.3) {
            found = Some((x, g, c3, profit));
        }
    }
    let level = st.y * (-st.c).exp();
    trace.thresholds.y_exp_neg_c = Some(level);
    match found {
        Some((x, g, c3, _)) => {
            trace.chosen_x = Some(x);
            trace.thresholds.cost3_good = Some(g);
            if level < 2.0 {
                let c1 = cost1(pop, s, 1.0)?;
                trace.branch = Branch::FineCost1;
                trace.cost1 = Some(c1);
                trace.output = c1.policy;
                trace.tie_fraction = c1.tie_fraction;
            } else {
                if c3.clamped {
                    trace
                        .warnings
                        .push("negative Cost3 cost clamped to 0".into());
                }
                trace.branch = Branch::FineCost3;
                trace.output = c3.policy;
            }
        }
        None => {
            trace.branch = Branch::FineBlowupFallback;
            trace.output = br.policy;
            trace.tie_fraction = br.tie_fraction;
        }
    }
    Ok(trace)
}

/// The fine routine on its own; `s` must have `p > c` and some purchaser in
/// the `eps3` class whenever `c > 1`.
pub fn fine_routine(pop: &Population, s: &Policy, beta: f64) -> Result<(Policy, ApproxTrace)> {
    let atoms = pop.product_atoms();
    let partition = partition_atoms(&atoms, s)?;
    let trace = fine_trace(pop, &atoms, s, beta, partition)?;
    Ok((trace.output, trace))
}

pub fn approx_routine(pop: &Population, s: &Policy) -> Result<(Policy, ApproxTrace)> {
    s.validate()?;
    if s.p < s.c {
        return Err(Error::Precondition(format!(
            "price {} below cost {}",
            s.p, s.c
        )));
    }
    let atoms = pop.product_atoms();
    let partition = partition_atoms(&atoms, s)?;
    let beta = 0.5;
    let early = |branch: Branch, eps: f64| -> Result<ApproxTrace> {
        let c1 = cost1(pop, s, eps)?;
        let mut warnings = Vec::new();
        if c1.beyond_loss_curve {
            warnings.push("Cost1 shift exceeds the loss curve".into());
        }
        Ok(ApproxTrace {
            input: *s,
            partition,
            branch,
            beta,
            transformed: None,
            blowup: None,
            cost1: Some(c1),
            chosen_x: None,
            thresholds: Thresholds::default(),
            warnings,
            output: c1.policy,
            tie_fraction: c1.tie_fraction,
        })
    };
    let trace = if partition.eps1 >= 0.125 {
        early(Branch::Cost1Full, 1.0)?
    } else if partition.eps2 >= 0.125 {
        early(
            Branch::Cost1Eps12,
            (partition.eps1 + partition.eps2).min(1.0),
        )?
    } else {
        fine_trace(pop, &atoms, s, beta, partition)?
    };
    Ok((trace.output, trace))
}
