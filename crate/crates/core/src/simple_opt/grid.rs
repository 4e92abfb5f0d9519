//! Grid solvers.
//!
//! For fixed `(y, c)` the price is exact: any price strictly between two
//! consecutive post-values sells to the same set at a lower margin than the
//! upper of the two, so only post-values are candidates. Sorting post-values
//! once turns every candidate into a prefix of the sorted list.

use std::cmp::Ordering;

use crate::error::Result;
use crate::exec::map_indexed;
use crate::model::{loss_of, risk_of, summarize, Policy, TIE_TOL};
use crate::population::{Instance, JointAtom};

use super::exact::{all_staircases, exact_at_cost};
use super::{max_fine_for_loss, Candidate, Method, SolveResult, SolverConfig};

/// Binding-fine candidates are O(n^2) per cell; above this, cells skip them.
const BINDING_LIMIT_CELL: usize = 16;
const BINDING_LIMIT_LOCAL: usize = 400;
/// Budget of staircase solves for the exact-in-`y` scan over the cost grid.
const EXACT_SCAN_BUDGET: u128 = 200_000;

struct Row {
    idx: usize,
    pv: f64,
    prob: f64,
    risk: f64,
}

fn sorted_rows(atoms: &[JointAtom], y: f64, c: f64) -> Vec<Row> {
    let mut rows: Vec<Row> = atoms
        .iter()
        .enumerate()
        .map(|(idx, a)| Row {
            idx,
            pv: a.buyer.value - loss_of(a.buyer.efficiency, y, c),
            prob: a.prob,
            risk: risk_of(a.buyer.efficiency, y, c),
        })
        .collect();
    rows.sort_by(|a, b| b.pv.total_cmp(&a.pv).then(a.idx.cmp(&b.idx)));
    rows
}

/// Best feasible price at `(y, c)`, optionally adding, for every purchase
/// set seen, the largest fine at which that set still pays the floor.
fn best_at(
    atoms: &[JointAtom],
    y: f64,
    c: f64,
    floor: f64,
    tol: f64,
    binding: bool,
) -> Option<Candidate> {
    let rows = sorted_rows(atoms, y, c);
    let n = rows.len();
    let mut best: Option<Candidate> = None;
    let (mut mass, mut risky) = (0.0, 0.0);
    let mut end = 0;
    let mut last_end = usize::MAX;
    for j in 0..n {
        let price = rows[j].pv;
        if price < 0.0 {
            break;
        }
        while end < n && rows[end].pv >= price - TIE_TOL {
            mass += rows[end].prob;
            risky += rows[end].prob * rows[end].risk;
            end += 1;
        }
        if (price - c) * mass >= floor - tol {
            let cand = Candidate {
                policy: Policy { y, c, p: price },
                ext: risky / mass,
            };
            best = Candidate::better(best, Some(cand));
        }
        if binding && end != last_end {
            last_end = end;
            let set: Vec<usize> = rows[..end].iter().map(|r| r.idx).collect();
            best = Candidate::better(best, binding_candidate(atoms, &set, mass, c, floor, tol));
        }
    }
    best
}

/// Largest fine at which every atom of `set` keeps `pv >= c + floor/mass`.
fn binding_candidate(
    atoms: &[JointAtom],
    set: &[usize],
    mass: f64,
    c: f64,
    floor: f64,
    tol: f64,
) -> Option<Candidate> {
    let needed = c + floor / mass;
    let mut y = f64::INFINITY;
    for &i in set {
        let slack = atoms[i].buyer.value - needed;
        if slack < 0.0 {
            return None;
        }
        y = y.min(max_fine_for_loss(atoms[i].buyer.efficiency, slack, c));
    }
    let price = set
        .iter()
        .map(|&i| atoms[i].buyer.value - loss_of(atoms[i].buyer.efficiency, y, c))
        .fold(f64::INFINITY, f64::min)
        .max(0.0);
    let policy = Policy { y, c, p: price };
    let s = summarize(atoms, &policy, 1.0);
    (s.profit >= floor - tol).then_some(Candidate {
        policy,
        ext: s.conditional,
    })
}

fn fine_axis(config: &SolverConfig) -> Vec<f64> {
    std::iter::once(0.0).chain(config.y_grid.points()).collect()
}

/// Largest fine in `[lo, hi]` at which the purchase set of `(lo, price)`
/// still pays the floor and stays separated, by bisection.
fn refine_fine_right(
    atoms: &[JointAtom],
    start: Candidate,
    hi: f64,
    floor: f64,
    config: &SolverConfig,
) -> Option<Candidate> {
    let c = start.policy.c;
    let members: Vec<bool> = atoms
        .iter()
        .map(|a| {
            a.buyer.value - loss_of(a.buyer.efficiency, start.policy.y, c)
                >= start.policy.p - TIE_TOL
        })
        .collect();
    let holds = |y: f64| -> Option<Candidate> {
        let mut price = f64::INFINITY;
        let mut outside = f64::NEG_INFINITY;
        let mut mass = 0.0;
        for (a, &m) in atoms.iter().zip(&members) {
            let pv = a.buyer.value - loss_of(a.buyer.efficiency, y, c);
            if m {
                price = price.min(pv);
                mass += a.prob;
            } else {
                outside = outside.max(pv);
            }
        }
        if outside >= price - 2.0 * TIE_TOL || (price - c) * mass < floor - config.tolerance {
            return None;
        }
        let policy = Policy { y, c, p: price };
        let s = summarize(atoms, &policy, 1.0);
        (s.profit >= floor - config.tolerance).then_some(Candidate {
            policy,
            ext: s.conditional,
        })
    };
    let mut best = Some(start);
    let (mut lo, mut up) = (start.policy.y, hi);
    for _ in 0..config.refine_iters {
        let mid = 0.5 * (lo + up);
        match holds(mid) {
            Some(cand) => {
                best = Candidate::better(best, Some(cand));
                lo = mid;
            }
            None => up = mid,
        }
    }
    best
}

fn reduce(cands: Vec<Option<Candidate>>) -> Option<Candidate> {
    cands.into_iter().fold(None, Candidate::better)
}

/// Dense log-grid over the fine, exact price per fine, then right-side
/// refinement of the winning cell.
pub fn best_fine_policy_grid(inst: &Instance, config: &SolverConfig) -> Result<SolveResult> {
    config.validate()?;
    let atoms = inst.population().product_atoms();
    let floor = inst.profit_floor();
    let ys = fine_axis(config);
    let binding = atoms.len() <= BINDING_LIMIT_LOCAL;
    let per_y = map_indexed(ys.len(), config.execution, |i| {
        best_at(&atoms, ys[i], 0.0, floor, config.tolerance, binding)
    });
    let mut best = reduce(per_y.clone()).expect("the zero fine is always feasible");
    if let Some(i) = per_y
        .iter()
        .position(|c| c.as_ref().is_some_and(|c| c.policy.y == best.policy.y))
    {
        let start = per_y[i].expect("position found a candidate");
        if i + 1 < ys.len() {
            if let Some(r) = refine_fine_right(&atoms, start, ys[i + 1], floor, config) {
                best = Candidate::better(Some(best), Some(r)).expect("nonempty");
            }
        }
    }
    Ok(SolveResult::new(
        inst,
        best.policy,
        Method::Grid,
        config.tolerance,
    ))
}

/// Shrinking 9x9 pattern search in `(ln y, c)` around `start`.
fn pattern_search(
    atoms: &[JointAtom],
    start: Candidate,
    mut dlog: f64,
    mut dc: f64,
    y_floor: f64,
    floor: f64,
    config: &SolverConfig,
) -> Candidate {
    let binding = atoms.len() <= BINDING_LIMIT_LOCAL;
    let mut best = start;
    for _ in 0..config.refine_iters {
        let center = best;
        let probes: Vec<(f64, f64)> = (-4i32..=4)
            .flat_map(|i| (-4i32..=4).map(move |j| (i, j)))
            .map(|(i, j)| {
                let y = if center.policy.y > 0.0 {
                    center.policy.y * (dlog * i as f64 / 4.0).exp()
                } else if i <= 0 {
                    0.0
                } else {
                    y_floor * (dlog * (i - 1) as f64 / 4.0).exp()
                };
                let c = (center.policy.c + dc * j as f64 / 4.0).max(0.0);
                (y, c)
            })
            .collect();
        let found = reduce(map_indexed(probes.len(), config.execution, |idx| {
            let (y, c) = probes[idx];
            best_at(atoms, y, c, floor, config.tolerance, binding)
        }));
        match found {
            Some(f) if f.cmp_key(&best) == Ordering::Less => best = f,
            _ => {
                dlog *= 0.5;
                dc *= 0.5;
            }
        }
    }
    best
}

/// 1-D refinement of the cost axis with the fine solved exactly per cost.
fn refine_cost_exact(
    inst: &Instance,
    atoms: &[JointAtom],
    sets: &[Vec<usize>],
    start: Candidate,
    mut dc: f64,
    config: &SolverConfig,
) -> Candidate {
    let mut best = start;
    for _ in 0..config.refine_iters {
        let c0 = best.policy.c;
        let probes: Vec<f64> = [-1.0, -0.5, 0.5, 1.0]
            .iter()
            .map(|m| (c0 + m * dc).max(0.0))
            .collect();
        let found = probes
            .iter()
            .map(|&c| exact_at_cost(inst, atoms, sets, c, config))
            .fold(None, Candidate::better);
        match found {
            Some(f) if f.cmp_key(&best) == Ordering::Less => best = f,
            _ => dc *= 0.5,
        }
    }
    best
}

/// Grid over `(y, c)` with exact price per cell and local refinement; no
/// simple-policy seeding.
pub fn best_general_policy_grid(inst: &Instance, config: &SolverConfig) -> Result<SolveResult> {
    config.validate()?;
    let atoms = inst.population().product_atoms();
    let floor = inst.profit_floor();
    let ys = fine_axis(config);
    let cs = config.c_grid.points(inst.population().values().max_point());
    let binding = atoms.len() <= BINDING_LIMIT_CELL;
    let cells = map_indexed(ys.len() * cs.len(), config.execution, |idx| {
        let (i, j) = (idx / cs.len(), idx % cs.len());
        best_at(&atoms, ys[i], cs[j], floor, config.tolerance, binding)
    });
    let grid_best = reduce(cells).expect("the unregulated price is always feasible");

    let y_grid = &config.y_grid;
    let dlog = (y_grid.max / y_grid.min).ln() / (y_grid.count - 1) as f64;
    let dc = (cs[cs.len() - 1] - cs[0]) / (cs.len() - 1) as f64;
    let mut best = pattern_search(&atoms, grid_best, dlog, dc, y_grid.min, floor, config);

    let pop = inst.population();
    let sets_total = super::staircase_count(pop.values().len(), pop.efficiencies().len());
    if atoms.len() <= super::EXACT_ATOM_LIMIT && sets_total * cs.len() as u128 <= EXACT_SCAN_BUDGET
    {
        let sets = all_staircases(inst);
        let scan = map_indexed(cs.len(), config.execution, |j| {
            exact_at_cost(inst, &atoms, &sets, cs[j], &sequential(config))
        });
        if let Some(s) = reduce(scan) {
            let refined = refine_cost_exact(inst, &atoms, &sets, s, dc, config);
            best = Candidate::better(Some(best), Some(refined)).expect("nonempty");
        }
    }
    Ok(SolveResult::new(
        inst,
        best.policy,
        Method::Grid,
        config.tolerance,
    ))
}

// Nested maps stay on one thread; the outer map already fans out.
fn sequential(config: &SolverConfig) -> SolverConfig {
    SolverConfig {
        execution: crate::exec::Execution::Sequential,
        ..*config
    }
}
