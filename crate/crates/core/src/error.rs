use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input data or files.
    #[error("format error: {0}")]
    Format(String),

    /// An argument outside its admissible range.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// The label model has no row for a signature observed in the data.
    #[error("label model does not cover signature z={z_id}")]
    Coverage { z_id: usize },

    #[error("insufficient sample: need at least {needed} observations, got {got}")]
    InsufficientSample { needed: usize, got: usize },

    #[error("degenerate denominator: {0}")]
    DegenerateDenominator(String),

    #[error("instance too large for the exact oracle: {size} > {limit}")]
    TooLarge { size: usize, limit: usize },

    /// Marginals of a transport instance disagree.
    #[error("model/data inconsistency: {0}")]
    Inconsistent(String),

    /// The optimizer produced a non-finite value or gradient.
    #[error("numerical failure after {iterations} iterations: {reason}")]
    Numerical {
        reason: String,
        iterations: usize,
        last_iterate: Vec<f64>,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Format(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}
