use thiserror::Error;

/// Errors raised by the allocation, reserve and hedging routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Demand exceeds the largest mean achievable on the simplex.
    #[error("infeasible demand {demand} (largest achievable mean is {max_mean})")]
    InfeasibleDemand { demand: f64, max_mean: f64 },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

/// Returns an invalid-argument error unless `cond` holds.
pub(crate) fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(invalid(msg()))
    }
}
