//! Seeded randomized check of the approximation guarantee.
//!
//! Trial `i` draws from its own generator seeded with `seed + i`, so results
//! do not depend on how trials are scheduled.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::approx::{approx_routine, ApproxTrace};
use crate::exec::{map_indexed, Execution};
use crate::model::{evaluate_with_tie, summarize, ExternalityMode, Policy};
use crate::population::{DiscreteDistribution, Instance, Population};

pub const PROFIT_RATIO_FLOOR: f64 = 1.0 / 8.0;
pub const EXTERNALITY_RATIO_CEILING: f64 = 40.0 / 3.0;
pub const RATIO_SLACK: f64 = 1e-9;

/// Default seed; the CLI lets `EXTERNREG_SEED` override it.
pub const DEFAULT_SEED: u64 = 0x5eed_2024;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub trial: usize,
    pub instance: serde_json::Value,
    pub input: Policy,
    pub profit_ratio: f64,
    pub externality_ratio: f64,
    pub simple: bool,
    pub trace: ApproxTrace,
}

impl TrialOutcome {
    pub fn passes(&self) -> bool {
        self.simple
            && self.profit_ratio >= PROFIT_RATIO_FLOOR - RATIO_SLACK
            && self.externality_ratio <= EXTERNALITY_RATIO_CEILING + RATIO_SLACK
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FuzzReport {
    pub seed: u64,
    pub profile: Profile,
    pub trials: usize,
    pub min_profit_ratio: f64,
    pub max_externality_ratio: f64,
    pub branches: BTreeMap<String, usize>,
    pub failures: Vec<TrialOutcome>,
}

impl FuzzReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

fn marginal(
    rng: &mut ChaCha8Rng,
    n: usize,
    draw: impl Fn(&mut ChaCha8Rng) -> f64,
) -> DiscreteDistribution {
    loop {
        let weights: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
        let total: f64 = weights.iter().sum();
        let pairs: Vec<(f64, f64)> = weights.iter().map(|w| (draw(rng), w / total)).collect();
        if let Ok(d) = DiscreteDistribution::new(pairs) {
            return d;
        }
    }
}

/// Sampling regime for random cases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    /// `v` in `(0, 10]`, `k` in `[0, 10]`, up to 4x4 atoms.
    #[default]
    Standard,
    /// Log-uniform values over `[0.1, 10^4]`, many zero-effectiveness
    /// atoms and costs above 1: reaches the heavy and `Cost³` branches.
    HeavyTail,
}

fn random_population(rng: &mut ChaCha8Rng, profile: Profile) -> Population {
    let nv = rng.gen_range(1..=4);
    let nk = rng.gen_range(1..=4);
    let (values, effs) = match profile {
        Profile::Standard => (
            marginal(rng, nv, |r| 10.0 * (1.0 - r.gen::<f64>())),
            marginal(rng, nk, |r| {
                if r.gen_bool(0.15) {
                    0.0
                } else {
                    r.gen_range(0.0..10.0)
                }
            }),
        ),
        Profile::HeavyTail => (
            marginal(rng, nv, |r| 10f64.powf(r.gen_range(-1.0..4.0))),
            marginal(rng, nk, |r| {
                if r.gen_bool(0.3) {
                    0.0
                } else {
                    r.gen_range(0.0..4.0)
                }
            }),
        ),
    };
    Population::new(values, effs).expect("at most 16 atoms")
}

fn random_policy(rng: &mut ChaCha8Rng, pop: &Population, profile: Profile) -> Policy {
    if profile == Profile::HeavyTail {
        let c: f64 = rng.gen_range(1.0..4.0);
        let y = c.exp() * rng.gen_range(0.3..4.0);
        return Policy {
            y,
            c,
            p: c + 10f64.powf(rng.gen_range(-2.0..1.0)),
        };
    }
    let vmax = pop.values().max_point();
    // Half the draws bias toward high cost and large fines, which is where
    // the fine routine's deeper branches live.
    let deep = rng.gen_bool(0.5);
    let y = if rng.gen_bool(0.1) {
        0.0
    } else if deep {
        10f64.powf(rng.gen_range(0.0..4.0))
    } else {
        10f64.powf(rng.gen_range(-2.0..3.0))
    };
    let c = if rng.gen_bool(0.1) {
        0.0
    } else if deep {
        rng.gen_range(1.0..6.0)
    } else {
        rng.gen_range(0.0..4.0)
    };
    let margin = rng.gen_range(1e-3..1.0) * vmax;
    Policy {
        y,
        c,
        p: c + margin,
    }
}

/// Draws a population and a policy with `p > c` and positive sales.
pub fn random_case(seed: u64, profile: Profile) -> (Instance, Policy) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let pop = random_population(&mut rng, profile);
        let atoms = pop.product_atoms();
        for _ in 0..64 {
            let s = random_policy(&mut rng, &pop, profile);
            let sum = summarize(&atoms, &s, 1.0);
            if sum.sale_prob > 0.0 && sum.profit > 0.0 {
                let inst =
                    Instance::new(pop.clone(), sum.profit).expect("regulated profit is attainable");
                return (inst, s);
            }
        }
    }
}

pub fn run_trial(trial: usize, seed: u64, profile: Profile) -> crate::Result<TrialOutcome> {
    let (inst, s) = random_case(seed.wrapping_add(trial as u64), profile);
    let pop = inst.population();
    let base = evaluate_with_tie(pop, &s, ExternalityMode::Conditional, 1.0);
    let (out, trace) = approx_routine(pop, &s)?;
    let got = evaluate_with_tie(pop, &out, ExternalityMode::Conditional, trace.tie_fraction);
    Ok(TrialOutcome {
        trial,
        instance: serde_json::from_str(&inst.to_json()).expect("instance JSON is valid"),
        input: s,
        profit_ratio: got.profit / base.profit,
        externality_ratio: got.externality / base.externality,
        simple: out.is_simple(),
        trace,
    })
}

pub fn fuzz_theorem(
    trials: usize,
    seed: u64,
    profile: Profile,
    exec: Execution,
) -> crate::Result<FuzzReport> {
    let outcomes = map_indexed(trials, exec, |i| run_trial(i, seed, profile));
    let mut report = FuzzReport {
        seed,
        profile,
        trials,
        min_profit_ratio: f64::INFINITY,
        max_externality_ratio: 0.0,
        branches: BTreeMap::new(),
        failures: Vec::new(),
    };
    for o in outcomes {
        let o = o?;
        report.min_profit_ratio = report.min_profit_ratio.min(o.profit_ratio);
        report.max_externality_ratio = report.max_externality_ratio.max(o.externality_ratio);
        let name = serde_json::to_value(o.trace.branch)
            .ok()
            .and_then(|v| v.as_str().map(str::to_owned))
            .unwrap_or_default();
        *report.branches.entry(name).or_default() += 1;
        if !o.passes() {
            report.failures.push(o);
        }
    }
    Ok(report)
}
