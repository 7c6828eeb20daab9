use qsg_core::QsgError;
use thiserror::Error;

/// Failure of a CLI command, split by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Unreadable, malformed or invalid configuration. Exit code 1.
    #[error("config error: {0}")]
    Config(String),
    /// Failure while simulating or writing output. Exit code 2.
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn field(field: &str, reason: impl std::fmt::Display) -> Self {
        CliError::Config(format!("field `{field}`: {reason}"))
    }

    /// Library errors raised while checking a config.
    pub fn from_config(e: QsgError) -> Self {
        CliError::Config(e.to_string())
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl From<QsgError> for CliError {
    fn from(e: QsgError) -> Self {
        match e {
            QsgError::InvalidConfig { .. } => CliError::Config(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}
