use thiserror::Error;

/// Errors raised by the model, optimizers and data pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ArdError {
    /// Malformed or inconsistent input: dimensions, non-finite values, bad options.
    #[error("invalid input: {0}")]
    Input(String),
    /// An SPD factorization failed even after the maximum jitter was applied.
    #[error("numerical failure factorizing {matrix}: {detail} (condition estimate {condition:.3e})")]
    Numerical {
        matrix: String,
        condition: f64,
        detail: String,
    },
}

impl ArdError {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        ArdError::Input(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, ArdError>;
