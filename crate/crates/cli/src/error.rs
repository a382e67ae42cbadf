use cccvae::Error;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        Self::Usage(msg.into())
    }

    /// Names the file an IO error came from.
    pub fn at(self, path: &std::path::Path) -> Self {
        match self {
            Self::Io(e) | Self::Core(Error::Io(e)) => Self::usage(format!("{}: {e}", path.display())),
            Self::Csv(e) if matches!(e.kind(), csv::ErrorKind::Io(_)) => {
                Self::usage(format!("{}: {e}", path.display()))
            }
            other => other,
        }
    }

    /// 3 for numerical failures, 2 for everything a user can fix in the inputs.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Core(
                Error::Diverged { .. }
                | Error::NonFinite(_)
                | Error::NotPositiveDefinite { .. }
                | Error::Asymmetric { .. },
            ) => EXIT_NUMERICAL,
            _ => EXIT_USAGE,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
