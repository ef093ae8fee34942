use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("zero diagonal entry at index {index}")]
    ZeroDiagonal { index: usize },

    #[error("matrix is not positive definite (pivot {pivot:e} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    #[error("matrix has a nonzero entry at ({row}, {col}) outside {bands} bands")]
    BandViolation { row: usize, col: usize, bands: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("participation schema infeasible: {0}")]
    InfeasibleSchema(String),

    #[error("problem too large for exhaustive enumeration: n = {n}, limit {limit}")]
    TooLarge { n: usize, limit: usize },

    #[error("noise stream exhausted after {steps} steps")]
    StreamExhausted { steps: usize },

    #[error("accounting event not supported here: {0}")]
    UnsupportedEvent(String),

    #[error("calibration bracket failure: {0}")]
    Bracket(String),

    #[error("malformed matrix file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
