//! Error type shared by every module.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid loss: {0}")]
    InvalidLoss(String),

    #[error("alpha must lie in (0, 1), got {0}")]
    InvalidAlpha(f64),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("empty data: {0}")]
    EmptyData(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("alpha {alpha} is infeasible with n = {n} calibration points (need alpha > 1/(n+1))")]
    InfeasibleLevel { alpha: f64, n: usize },

    #[error("direction has negative weight {weight} at point {index}")]
    NegativeDirection { index: usize, weight: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("segmentation mask has no positive pixel")]
    EmptyMask,

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("malformed input: {0}")]
    Format(String),

    #[error("I/O error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
