use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid pmf: {0}")]
    InvalidPmf(String),

    /// A truncated law carries more tail mass than the caller tolerates.
    #[error("tail mass {tail:e} exceeds tolerance {tol:e}; increase the truncation")]
    InsufficientTruncation { tail: f64, tol: f64 },

    #[error("rate {lambda} is not below the service rate {mu}")]
    UnstableRate { lambda: f64, mu: f64 },

    #[error("solver did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("support cap {cap} reached with {mass:e} mass at the top of the support")]
    TruncationInadequate { cap: usize, mass: f64 },

    #[error("enumeration needs at least {needed} states, budget is {budget}")]
    BudgetExceeded { needed: u128, budget: u128 },

    #[error("block entropy estimate is undersampled: {distinct} distinct blocks in {samples} samples")]
    Undersampled { distinct: usize, samples: usize },

    #[error("too few points to fit: {points} (need at least {needed})")]
    InsufficientSupport { points: usize, needed: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
