use thiserror::Error;

/// Errors raised by the simulation library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum QsgError {
    #[error("label count K={0} is invalid (need K >= 2)")]
    InvalidDimension(usize),

    #[error("label index {index} out of range for K={k}")]
    LabelOutOfRange { index: usize, k: usize },

    #[error("dimension mismatch: expected K={expected}, found K={found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid simplex weights: {0}")]
    InvalidWeights(String),

    #[error("invalid bandwidth m={0} (need m >= 1)")]
    InvalidBandwidth(usize),

    #[error("invalid temperature T={0} (need T > 0)")]
    InvalidTemperature(f64),

    #[error("invalid adaptation rate alpha={0} (need 0 < alpha <= 1)")]
    InvalidRate(f64),

    #[error("unsupported configuration: {0}")]
    UnsupportedConfiguration(String),

    #[error("invalid population: {0}")]
    InvalidPopulation(String),

    #[error("invalid config field `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("protocol violation: {0}")]
    ProtocolViolation(String),
}

pub type Result<T> = std::result::Result<T, QsgError>;

pub(crate) fn config_err(field: &'static str, reason: impl Into<String>) -> QsgError {
    QsgError::InvalidConfig {
        field,
        reason: reason.into(),
    }
}
