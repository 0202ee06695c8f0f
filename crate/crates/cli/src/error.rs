use std::process::ExitCode;

use thiserror::Error;

/// Command failures, keyed to the process exit codes:
/// 1 usage, 2 data, 3 check failure.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Check(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            Self::Usage(_) => ExitCode::from(1),
            Self::Data(_) => ExitCode::from(2),
            Self::Check(_) => ExitCode::from(3),
        }
    }
}

impl From<adapool::Error> for CliError {
    fn from(e: adapool::Error) -> Self {
        match e {
            adapool::Error::InvalidParameter(msg) => Self::Usage(msg),
            other => Self::Data(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Data(e.to_string())
    }
}

impl From<image::ImageError> for CliError {
    fn from(e: image::ImageError) -> Self {
        Self::Data(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
