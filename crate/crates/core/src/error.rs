use thiserror::Error;

/// Errors raised by population construction, policy handling and the solvers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid range: lo = {lo}, hi = {hi}")]
    InvalidRange { lo: f64, hi: f64 },

    #[error("population has {atoms} joint atoms, limit is {limit}")]
    TooManyAtoms { atoms: usize, limit: usize },

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    #[error("infeasible profit floor {floor}: best unregulated profit is {best}")]
    Infeasible { floor: f64, best: f64 },

    #[error("argument out of domain: {0}")]
    Domain(String),

    #[error("policy sells with zero probability")]
    ZeroSaleProbability,

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("unknown case {0:?}")]
    UnknownCase(String),

    #[error("malformed input: {0}")]
    Parse(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
