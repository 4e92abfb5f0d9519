use externreg::approx::{approx_routine, blowup, cost1, epsilon_partition};
use externreg::fuzz::{random_case, Profile, EXTERNALITY_RATIO_CEILING, PROFIT_RATIO_FLOOR};
use externreg::model::{
    best_effort, buyer_outcome, evaluate_with_tie, loss_of, policy_gap, post_value, risk_of,
    summarize, utility_of,
};
use externreg::population::BuyerType;
use externreg::simple_opt::{
    best_cost_policy, best_fine_policy, best_fine_policy_exact, best_fine_policy_grid,
    best_general_policy, c_star, cutoff_t, inv_transform, SolverConfig,
};
use externreg::stackelberg::{revenue_table, seller_best_price, stackelberg_evaluate};
use externreg::{DiscreteDistribution, Execution, ExternalityMode, Instance, Policy, Population};
use proptest::prelude::*;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

fn dist(
    max_atoms: usize,
    point: impl Strategy<Value = f64>,
) -> impl Strategy<Value = DiscreteDistribution> {
    prop::collection::vec((point, 0.05f64..1.0), 1..=max_atoms).prop_map(|pairs| {
        let total: f64 = pairs.iter().map(|p| p.1).sum();
        DiscreteDistribution::new(pairs.into_iter().map(|(x, w)| (x, w / total))).unwrap()
    })
}

fn values() -> impl Strategy<Value = f64> {
    0.01f64..10.0
}

fn effectiveness() -> impl Strategy<Value = f64> {
    prop_oneof![1 => Just(0.0), 5 => 0.0f64..10.0, 1 => 10.0f64..500.0]
}

fn fine() -> impl Strategy<Value = f64> {
    prop_oneof![1 => Just(0.0), 6 => (-3.0f64..3.0).prop_map(|e| 10f64.powf(e))]
}

fn cost() -> impl Strategy<Value = f64> {
    prop_oneof![1 => Just(0.0), 4 => 0.0f64..5.0]
}

fn population(max: usize) -> impl Strategy<Value = Population> {
    (dist(max, values()), dist(max, effectiveness()))
        .prop_map(|(v, k)| Population::new(v, k).unwrap())
}

fn policy() -> impl Strategy<Value = Policy> {
    (fine(), cost(), 0.0f64..10.0).prop_map(|(y, c, m)| Policy { y, c, p: c + m })
}

/// Moves every atom down by a random factor; the original dominates the result.
fn shrink(d: &DiscreteDistribution, factors: &[f64]) -> DiscreteDistribution {
    DiscreteDistribution::new(
        d.atoms()
            .iter()
            .zip(factors.iter().cycle())
            .map(|(a, f)| (a.point * f, a.prob)),
    )
    .unwrap()
}

fn instance_below_optimum(pop: Population, frac: f64) -> Instance {
    let floor = frac * pop.unregulated_optimum();
    Instance::new(pop, floor).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn risk_loss_effort_chain(k in effectiveness(), y in fine(), c in cost()) {
        let h = best_effort(k, y, c);
        let risk = risk_of(k, y, c);
        prop_assert!(h >= 0.0);
        prop_assert!(close(risk, (-c - k * h).exp(), 1e-12));
        prop_assert!(close(loss_of(k, y, c), y * risk + h, 1e-12));
        prop_assert!(risk <= (-c).exp() * (1.0 + 1e-15));
    }

    #[test]
    fn best_effort_beats_alternatives(k in effectiveness(), y in fine(), c in cost(), alt in 0.0f64..20.0) {
        let best = loss_of(k, y, c);
        let other = y * (-c - k * alt).exp() + alt;
        prop_assert!(best <= other + 1e-12 * other.max(1.0));
    }

    #[test]
    fn buyer_measures_monotone_in_k(a in effectiveness(), b in effectiveness(), y in fine(), c in cost(), v in values(), s in policy()) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(risk_of(hi, y, c) <= risk_of(lo, y, c) + 1e-15);
        prop_assert!(loss_of(hi, y, c) <= loss_of(lo, y, c) + 1e-12);
        // Total security `c + k h` is monotone everywhere; effort itself only
        // up to its peak at `yk = e^{c+1}`.
        prop_assert!(hi * best_effort(hi, y, c) >= lo * best_effort(lo, y, c) - 1e-12);
        if y > 0.0 && hi * y <= (c + 1.0).exp() {
            prop_assert!(best_effort(hi, y, c) >= best_effort(lo, y, c) - 1e-12);
        }
        let u = |k| utility_of(BuyerType { value: v, efficiency: k }, &s);
        prop_assert!(u(hi) >= u(lo) - 1e-12);
    }

    #[test]
    fn effort_peaks_then_falls(y in 0.01f64..100.0, c in 0.0f64..3.0) {
        let peak = (c + 1.0).exp() / y;
        prop_assert!(best_effort(peak, y, c) > best_effort(4.0 * peak, y, c));
    }

    #[test]
    fn post_value_monotone_in_both_coordinates(v1 in values(), v2 in values(), k1 in effectiveness(), k2 in effectiveness(), s in policy()) {
        let (vl, vh) = if v1 <= v2 { (v1, v2) } else { (v2, v1) };
        let (kl, kh) = if k1 <= k2 { (k1, k2) } else { (k2, k1) };
        let pv = |v, k| post_value(BuyerType { value: v, efficiency: k }, &s);
        prop_assert!(pv(vh, kl) >= pv(vl, kl) - 1e-12);
        prop_assert!(pv(vl, kh) >= pv(vl, kl) - 1e-12);
    }

    #[test]
    fn lower_loss_earns_more(pop in population(4), s in policy(), y2 in fine(), c2 in cost()) {
        // Same margin; orient the pair so the first has lower loss + cost on the support.
        let t = Policy { y: y2, c: c2, p: c2 + s.margin() };
        let lower = |a: &Policy, b: &Policy| {
            pop.efficiencies().points().all(|k| loss_of(k, a.y, a.c) + a.c <= loss_of(k, b.y, b.c) + b.c)
        };
        let atoms = pop.product_atoms();
        let pairs = [(s, t), (t, s), (s, Policy { y: s.y * 3.0 + 0.1, ..s })];
        for (a, b) in pairs {
            if lower(&a, &b) {
                prop_assert!(summarize(&atoms, &a, 1.0).profit >= summarize(&atoms, &b, 1.0).profit - 1e-12);
            }
        }
    }

    #[test]
    fn dominating_effectiveness_earns_more(pop in population(4), s in policy(), f in prop::collection::vec(0.0f64..=1.0, 4)) {
        let weaker = shrink(pop.efficiencies(), &f);
        prop_assert!(pop.efficiencies().dominates(&weaker));
        let other = pop.with_efficiencies(weaker).unwrap();
        let a = summarize(&pop.product_atoms(), &s, 1.0).profit;
        let b = summarize(&other.product_atoms(), &s, 1.0).profit;
        prop_assert!(a >= b - 1e-12);
    }

    #[test]
    fn comparison_function_monotone(s in policy(), t in policy(), ks in prop::collection::vec(effectiveness(), 2..12)) {
        let (a, b) = if s.y * (-s.c).exp() <= t.y * (-t.c).exp() { (s, t) } else { (t, s) };
        let mut ks = ks;
        ks.sort_by(f64::total_cmp);
        let gaps: Vec<f64> = ks.iter().map(|&k| policy_gap(k, &a, &b)).collect();
        for w in gaps.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0), "{gaps:?} over {ks:?}");
        }
    }

    #[test]
    fn conditional_externality_within_buyer_risks(pop in population(4), s in policy()) {
        let out = evaluate_with_tie(&pop, &s, ExternalityMode::Conditional, 1.0);
        let risks: Vec<f64> = out.per_atom.iter().filter(|a| a.outcome.purchase_fraction > 0.0).map(|a| a.outcome.risk).collect();
        if let (Some(lo), Some(hi)) = (risks.iter().copied().reduce(f64::min), risks.iter().copied().reduce(f64::max)) {
            prop_assert!(out.externality >= lo * (1.0 - 1e-12) && out.externality <= hi * (1.0 + 1e-12));
        } else {
            prop_assert_eq!(out.externality, 0.0);
        }
    }

    #[test]
    fn joint_probabilities_sum_to_one(pop in population(6)) {
        let total: f64 = pop.product_atoms().iter().map(|a| a.prob).sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dominance_reflexive_and_transitive(d in dist(5, effectiveness()), f in prop::collection::vec(0.0f64..=1.0, 5), g in prop::collection::vec(0.0f64..=1.0, 5), e in dist(5, effectiveness())) {
        let d2 = shrink(&d, &f);
        let d3 = shrink(&d2, &g);
        prop_assert!(d.dominates(&d));
        prop_assert!(d.dominates(&d2) && d2.dominates(&d3) && d.dominates(&d3));
        for (a, b, c) in [(&d, &e, &d3), (&e, &d, &d2), (&d2, &e, &d3)] {
            if a.dominates(b) && b.dominates(c) {
                prop_assert!(a.dominates(c));
            }
        }
    }

    #[test]
    fn invariant_transform_is_exact(pop in population(4), s in policy(), u in 0.0f64..=1.0) {
        let atoms = pop.product_atoms();
        let base = summarize(&atoms, &s, 1.0);
        prop_assume!(s.margin() > 0.0 && base.sale_prob > 0.0);
        let alpha = u * s.p / s.margin();
        let t = inv_transform(&s, alpha).unwrap();
        prop_assert!(t.c >= 0.0);
        let out = summarize(&atoms, &t, 1.0);
        prop_assert!((out.profit - alpha * base.profit).abs() < 1e-10);
        let scale = (-(1.0 - alpha) * s.margin()).exp();
        prop_assert!((out.conditional - scale * base.conditional).abs() < 1e-10);
        for a in &atoms {
            let (x, y) = (buyer_outcome(a.buyer, &s, 1.0), buyer_outcome(a.buyer, &t, 1.0));
            prop_assert!(close(x.effort, y.effort, 1e-12));
            prop_assert!(close(x.loss, y.loss, 1e-12));
            prop_assert!(close(x.utility, y.utility, 1e-12));
        }
    }

    #[test]
    fn cutoff_grows_with_floor(v in dist(4, values()), a in 0.01f64..1.0, b in 0.01f64..1.0) {
        let opt = v.atoms().iter().rev().scan(0.0, |tail, atom| { *tail += atom.prob; Some(atom.point * *tail) }).fold(0.0, f64::max);
        let (lo, hi) = if a <= b { (a * opt, b * opt) } else { (b * opt, a * opt) };
        let (tl, th) = (cutoff_t(&v, lo).unwrap(), cutoff_t(&v, hi).unwrap());
        prop_assert!(th.t >= tl.t);
        prop_assert!(c_star(&v, hi).unwrap() <= c_star(&v, lo).unwrap());
    }

    #[test]
    fn stackelberg_price_is_best(pop in population(4), y in fine(), c in cost()) {
        let table = revenue_table(&pop, y, c).unwrap();
        let br = table.best_response();
        let atoms = pop.product_atoms();
        for row in &table.rows {
            if row.post_value >= c {
                let direct = summarize(&atoms, &Policy { y, c, p: row.post_value }, 1.0);
                prop_assert!((direct.profit - row.profit).abs() < 1e-9 * row.profit.abs().max(1.0));
                prop_assert!(br.profit >= row.profit);
            }
            let mass: f64 = table.rows.iter().filter(|o| o.post_value >= row.post_value).map(|o| o.prob).sum();
            prop_assert!((row.revenue - row.post_value * mass).abs() < 1e-12 * row.post_value.abs().max(1.0));
        }
        prop_assert!(br.profit >= 0.0);
    }

    #[test]
    fn augmented_invariant_property(pop in population(4), y in fine(), c in cost(), alpha in 0.0f64..=1.0) {
        let br = seller_best_price(&pop, y, c).unwrap();
        prop_assume!(br.sells && br.price > c);
        let s = Policy { y, c, p: br.price };
        let t = inv_transform(&s, alpha).unwrap();
        let br2 = seller_best_price(&pop, t.y, t.c).unwrap();
        prop_assert!(br2.profit >= alpha * br.profit - 1e-10);
        prop_assert!(br2.price >= br.price - 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn profit_tightness(pop in population(4), y in fine(), c in cost()) {
        let delta = 1e-3;
        let br = seller_best_price(&pop, y, c).unwrap();
        prop_assume!(br.sells && br.price > c && br.profit > 0.0);
        // A floor strictly below current profit, within the slack Inv(1 - δ) gives up.
        let floor = (1.0 - delta / 2.0) * br.profit;
        let s = Policy { y, c, p: br.price };
        let before = stackelberg_evaluate(&pop, y, c).unwrap();
        prop_assume!(before.externality > 0.0);
        let t = inv_transform(&s, 1.0 - delta).unwrap();
        let after = stackelberg_evaluate(&pop, t.y, t.c).unwrap();
        prop_assert!(after.profit >= floor * (1.0 - delta) - 1e-12);
        prop_assert!(after.profit >= (1.0 - delta) * br.profit - 1e-10);
        prop_assert!(after.externality < before.externality);
    }

    #[test]
    fn cost1_scales_profit_exactly(pop in population(4), s in policy(), eps in 0.01f64..=1.0) {
        let base = summarize(&pop.product_atoms(), &s, 1.0);
        prop_assume!(base.sale_prob > 0.0);
        let r = cost1(&pop, &s, eps).unwrap();
        prop_assert!(r.policy.is_cost_policy());
        let out = evaluate_with_tie(&pop, &r.policy, ExternalityMode::Conditional, r.tie_fraction);
        prop_assert!((out.sale_prob - eps * base.sale_prob).abs() < 1e-12);
        prop_assert!((out.profit - eps * base.profit).abs() < 1e-10 * base.profit.max(1.0));
    }

    #[test]
    fn epsilon_partition_is_a_distribution(pop in population(4), s in policy()) {
        prop_assume!(summarize(&pop.product_atoms(), &s, 1.0).sale_prob > 0.0);
        let e = epsilon_partition(&pop, &s).unwrap();
        for m in [e.eps1, e.eps2, e.eps3] {
            prop_assert!((0.0..=1.0).contains(&m));
        }
        prop_assert!((e.eps1 + e.eps2 + e.eps3 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn blowup_multiplier_is_the_sales_jump(seed in any::<u64>(), heavy in any::<bool>()) {
        let profile = if heavy { Profile::HeavyTail } else { Profile::Standard };
        let (inst, s) = random_case(seed, profile);
        let pop = inst.population();
        let br = blowup(pop, &s, 0.5);
        prop_assume!(br.as_ref().is_ok_and(|b| !b.q_capped));
        let br = br.unwrap();
        let atoms = pop.product_atoms();
        let target = summarize(&atoms, &s, 1.0).sale_prob;
        let probe = |x: f64| Policy { y: x * (br.y_sk / br.q), c: 0.0, p: s.margin() };
        let exact = summarize(&atoms, &br.policy, br.tie_fraction).sale_prob;
        prop_assert!(exact <= target + 1e-9, "sales {exact} vs {target}");
        if br.q > 1.0 {
            prop_assert!((exact - target).abs() < 1e-9, "sales {exact} vs {target}");
        }
        prop_assert!(summarize(&atoms, &probe(br.q * (1.0 + 1e-6)), 1.0).sale_prob <= target + 1e-12);
        if br.q > 1.0 {
            prop_assert!(summarize(&atoms, &probe(br.q * (1.0 - 1e-6)), 1.0).sale_prob > target);
        }
    }

    #[test]
    fn approximation_guarantee(seed in any::<u64>(), heavy in any::<bool>()) {
        let profile = if heavy { Profile::HeavyTail } else { Profile::Standard };
        let (inst, s) = random_case(seed, profile);
        let pop = inst.population();
        let (out, trace) = approx_routine(pop, &s).unwrap();
        prop_assert!(out.is_simple());
        let base = evaluate_with_tie(pop, &s, ExternalityMode::Conditional, 1.0);
        let got = evaluate_with_tie(pop, &out, ExternalityMode::Conditional, trace.tie_fraction);
        prop_assert!(got.profit >= PROFIT_RATIO_FLOOR * base.profit - 1e-9 * base.profit, "{trace:?}");
        prop_assert!(got.externality <= EXTERNALITY_RATIO_CEILING * base.externality + 1e-9 * base.externality, "{trace:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn exact_and_grid_fine_agree(pop in population(3), frac in 0.05f64..0.95) {
        let inst = instance_below_optimum(pop, frac);
        let config = SolverConfig { execution: Execution::Sequential, ..SolverConfig::default() };
        let exact = best_fine_policy_exact(&inst, &config).unwrap();
        let grid = best_fine_policy_grid(&inst, &config).unwrap();
        prop_assert!(exact.feasible && grid.feasible);
        prop_assert!((exact.externality() - grid.externality()).abs() < 1e-6,
            "exact {:?} grid {:?}", exact.policy, grid.policy);
    }

    #[test]
    fn solver_results_are_feasible(pop in population(3), frac in 0.05f64..=1.0) {
        let inst = instance_below_optimum(pop, frac);
        let config = SolverConfig { execution: Execution::Sequential, ..SolverConfig::default() };
        let cost = best_cost_policy(&inst, &config).unwrap();
        prop_assert!(close(cost.externality(), (-cost.policy.c).exp(), 1e-15));
        prop_assert_eq!(cost.policy.c, c_star(inst.population().values(), inst.profit_floor()).unwrap());
        for r in [cost, best_fine_policy(&inst, &config).unwrap(), best_general_policy(&inst, &config).unwrap()] {
            prop_assert!(r.feasible);
            prop_assert!(r.outcome.profit >= inst.profit_floor() - 1e-9);
        }
    }

    #[test]
    fn point_mass_optimum_is_simple(v in dist(3, values()), k in 0.0f64..8.0, frac in 0.05f64..0.95) {
        let pop = Population::new(v, DiscreteDistribution::point_mass(k).unwrap()).unwrap();
        let inst = instance_below_optimum(pop, frac);
        let config = SolverConfig { execution: Execution::Sequential, ..SolverConfig::default() };
        let simple = best_cost_policy(&inst, &config).unwrap().externality()
            .min(best_fine_policy(&inst, &config).unwrap().externality());
        let general = best_general_policy(&inst, &config).unwrap();
        prop_assert!(general.externality() >= simple - 1e-6);
    }
}
