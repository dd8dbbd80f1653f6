use std::path::PathBuf;

use evrecon_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    BadArgs(String),
    #[error("missing artifact: {}", .0.display())]
    Missing(PathBuf),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("malformed artifact: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::BadArgs(_) => 2,
            CliError::Missing(_) => 3,
            CliError::Numeric(_) => 4,
            CliError::Malformed(_) | CliError::Io(_) => 1,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::InvalidArgument(m) => CliError::BadArgs(m),
            CoreError::MissingArtifact(p) => CliError::Missing(p),
            CoreError::Numeric(m) => CliError::Numeric(m),
            CoreError::Io(e) => CliError::Io(e),
            other => CliError::Malformed(other.to_string()),
        }
    }
}
