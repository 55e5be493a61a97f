use thiserror::Error;

/// Errors surfaced by the library.
///
/// Numerical routines treat caller mistakes (bad dimensions, invalid
/// parameters) as errors and keep algorithmic quality concerns (iteration
/// caps, residual stalls) as flags on their result types.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("unsupported training pattern: {0}")]
    UnsupportedPattern(String),

    #[error("enumeration budget exceeded: {0}")]
    BudgetExceeded(String),

    #[error("deterministic SINR targets are infeasible: {0}")]
    InfeasibleTargets(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;
