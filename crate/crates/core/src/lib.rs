//! Regulating a single-item market whose buyers impose a security externality.
//!
//! A regulator picks a [`Policy`] `(fine y, cost c, price p)`. Buyers
//! best-respond with effort, the seller earns `(p - c)` per sale, and the
//! externality is the risk carried by the devices that are sold. The crate
//! evaluates policies on finite populations, searches for externality-minimal
//! policies under a profit floor, runs the bicriterion approximation that
//! turns any policy into a simple one, and replays the worked examples.

// `!(a > b)` is deliberate: it sends NaN down the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod approx;
pub mod casebook;
pub mod error;
pub mod exec;
pub mod fuzz;
pub mod model;
pub mod population;
pub mod simple_opt;
pub mod stackelberg;
pub mod sweep;

pub use error::{Error, Result};
pub use exec::Execution;
pub use model::{evaluate, ExternalityMode, MarketOutcome, Policy};
pub use population::{DiscreteDistribution, Instance, Population};
