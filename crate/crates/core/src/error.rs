use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, HbctError>;

#[derive(Debug, Error)]
pub enum HbctError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical domain error: {0}")]
    NumericalDomain(String),

    /// The reference models of a compatibility metric are indistinguishable,
    /// so the normalized gain has a vanishing denominator.
    #[error("degenerate baseline: {0}")]
    DegenerateBaseline(String),

    #[error("training failed at step {step}: {reason}")]
    TrainingFailure { step: usize, reason: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl HbctError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        HbctError::InvalidArgument(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        HbctError::NumericalDomain(msg.into())
    }

    /// Numerical and training failures are distinguished from configuration
    /// problems by the CLI exit code.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            HbctError::NumericalDomain(_)
                | HbctError::TrainingFailure { .. }
                | HbctError::DegenerateBaseline(_)
        )
    }
}
