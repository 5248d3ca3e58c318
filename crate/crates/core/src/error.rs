use thiserror::Error;

/// Errors produced by the forecasting library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid baseline travel time {0} (must be > 0)")]
    InvalidBaseline(f64),

    #[error("value {0} outside the domain of the operation")]
    Domain(f64),

    #[error("invalid normalization parameters: min {min} > max {max}")]
    InvalidNormalization { min: f64, max: f64 },

    #[error("index out of range: {0}")]
    Index(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("training diverged: {0}")]
    NonFinite(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("incompatible model: {0}")]
    Incompatible(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
