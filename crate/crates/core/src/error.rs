use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("dimension must be at least 1")]
    EmptyDimension,

    #[error("coordinate {index} = {value} is outside the range of its transform")]
    OutOfRange { index: usize, value: f64 },

    #[error("coordinate {index} = {value} is outside the model domain")]
    InvalidDomain { index: usize, value: f64 },

    #[error("invalid factor partition: {0}")]
    InvalidPartition(String),

    #[error("invalid layout: {0}")]
    InvalidLayout(String),

    #[error("invalid configuration: {field}: {message}")]
    Config { field: String, message: String },

    #[error("sample cache has no model gradients (drawn by the score estimator)")]
    MissingModelGradients,

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
