//! Error type with the process exit-code contract:
//! 0 success, 1 usage/config, 2 data, 3 numerical failure.

use detangle_core::Error as CoreError;

pub type ExitCode = u8;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Config(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        CliError::Data(msg.into())
    }
}

impl From<CoreError> for CliError {
    fn from(err: CoreError) -> Self {
        match &err {
            CoreError::Config(_) => CliError::Config(err.to_string()),
            CoreError::Data(_) | CoreError::Label { .. } | CoreError::Truncation { .. } => {
                CliError::Data(err.to_string())
            }
            _ => CliError::Numeric(err.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

/// IO failures on dataset/output paths are data errors.
pub fn io_data(err: std::io::Error, path: &std::path::Path) -> CliError {
    CliError::Data(format!("{}: {err}", path.display()))
}
