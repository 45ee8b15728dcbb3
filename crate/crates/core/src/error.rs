use thiserror::Error;

/// Every failure the engine can report.
#[derive(Debug, Error)]
pub enum MeldError {
    #[error("parameter outside its domain: {0}")]
    Domain(String),

    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("no draws available for {0}")]
    NoDraws(String),

    #[error("internal consistency error: {0}")]
    Internal(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("TOML error: {0}")]
    Toml(#[from] toml::de::Error),
}

pub type Result<T> = std::result::Result<T, MeldError>;

impl MeldError {
    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            MeldError::Config(_) | MeldError::Toml(_) => 2,
            MeldError::Validation(_) | MeldError::Csv(_) | MeldError::Dimension(_) | MeldError::NoDraws(_) => 3,
            MeldError::Domain(_)
            | MeldError::NotPositiveDefinite { .. }
            | MeldError::Numerical(_) => 4,
            MeldError::Io(_) | MeldError::Json(_) | MeldError::Internal(_) => 1,
        }
    }
}

pub fn domain(msg: impl Into<String>) -> MeldError {
    MeldError::Domain(msg.into())
}

pub fn validation(msg: impl Into<String>) -> MeldError {
    MeldError::Validation(msg.into())
}

pub fn config(msg: impl Into<String>) -> MeldError {
    MeldError::Config(msg.into())
}
