use thiserror::Error;

/// Errors raised across the OPF/sensitivity/learning pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("model assembly error: {0}")]
    Model(String),

    #[error("power flow did not converge after {iterations} iterations (max mismatch {mismatch:.3e})")]
    PfNotConverged { iterations: usize, mismatch: f64 },

    #[error("sensitivity unavailable: {0}")]
    Sensitivity(String),

    #[error("training aborted: {0}")]
    Training(String),

    #[error("empty test set: training size {size} leaves no instance out of {pool}")]
    EmptyTestSet { size: usize, pool: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag, used by the CLI's error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "parse",
            Error::Validation(_) => "validation",
            Error::Dimension(_) => "dimension",
            Error::Model(_) => "model",
            Error::PfNotConverged { .. } => "pf_not_converged",
            Error::Sensitivity(_) => "sensitivity",
            Error::Training(_) => "training",
            Error::EmptyTestSet { .. } => "empty_test_set",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
