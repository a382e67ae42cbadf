use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke a shape or size contract.
    #[error("contract violation: {0}")]
    Contract(String),

    /// An input fell outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("unknown gene symbol `{0}`")]
    UnknownGene(String),

    #[error("matrix is not symmetric (max |K - K^T| = {max_diff:e})")]
    Asymmetric { max_diff: f64 },

    #[error("matrix is not positive definite after jitter {jitter:e} (lambda_min ~ {min_eigenvalue:e})")]
    NotPositiveDefinite { min_eigenvalue: f64, jitter: f64 },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("parse error at {path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Self::Contract(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Self::Domain(msg.into())
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Self::Parse { path: path.into(), line, message: message.into() }
    }
}
