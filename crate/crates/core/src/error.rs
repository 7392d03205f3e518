use thiserror::Error;

/// Errors raised by the estimators, filters and diagnostics.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A state or derivative became NaN or infinite while stepping.
    #[error("non-finite value encountered at t = {t}")]
    NumericOverflow { t: f64 },

    #[error("improper rational operator: numerator degree {num} exceeds denominator degree {den}")]
    Improper { num: usize, den: usize },

    #[error("argument outside the valid domain: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
