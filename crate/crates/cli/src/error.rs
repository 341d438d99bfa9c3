use tap_core::TapError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Tap(#[from] TapError),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    /// 2 for user or configuration errors, 1 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io { .. } => 2,
            CliError::Tap(e) if e.is_user_error() => 2,
            CliError::Tap(_) | CliError::Numerical(_) => 1,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
