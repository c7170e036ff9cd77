use thiserror::Error;

/// Errors surfaced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input data: bad probabilities, non-square matrices,
    /// out-of-range parameters.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A stated precondition does not hold for the requested operation.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// A numerical routine failed to converge or detected an internal
    /// inconsistency.
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
    pub fn precondition(msg: impl Into<String>) -> Self {
        Error::Precondition(msg.into())
    }
    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
}
