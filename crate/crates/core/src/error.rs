use thiserror::Error;

/// Errors raised by the model, inference and projection routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("point {point:?} is outside the support of {family}")]
    OutsideSupport { family: String, point: Vec<f64> },

    #[error("natural parameter is not integrable: {0}")]
    NonIntegrable(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("capacity exceeded: {what} = {value} (limit {limit})")]
    Capacity {
        what: &'static str,
        value: usize,
        limit: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("optimizer state poisoned by a non-finite gradient at step {step}")]
    PoisonedState { step: u64 },

    #[error("empty support: {0}")]
    EmptySupport(&'static str),

    #[error("data distribution has zero mass at point index {0}")]
    ZeroMass(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            got,
        })
    }
}
