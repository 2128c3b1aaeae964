use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    /// Process exit status: 2 for configuration, 3 for data and I/O, 4 for invariants.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) | CliError::Io { .. } => 3,
            CliError::Invariant(_) => 4,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }
}

impl From<tlflr_core::Error> for CliError {
    fn from(e: tlflr_core::Error) -> Self {
        match e {
            tlflr_core::Error::Invariant(msg) => CliError::Invariant(msg),
            other => CliError::Data(other.to_string()),
        }
    }
}
