use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("undefined statistic: {0}")]
    UndefinedStatistic(String),

    /// A quantity left the representable range (e.g. a reference probability underflowed).
    #[error("numerical domain error: {0}")]
    Numerical(String),

    #[error("finite-difference oracle failed at coordinate {coord}: f = {value}")]
    Oracle { coord: usize, value: f64 },

    #[error("training diverged at step {step}: {msg}")]
    Divergence { step: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the mathematics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Numerical(_) | Error::Oracle { .. } | Error::Divergence { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
