//! Error types shared across the library.

use thiserror::Error;

/// Unified error type for grid construction, probes, and control synthesis.
#[derive(Debug, Error)]
pub enum Error {
    /// A constructor or operation received an argument outside its domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A field was required to carry a band-limit certificate but does not.
    #[error("field is not band-limited: {0}")]
    NotBandLimited(String),

    /// A numerical routine failed to reach its tolerance or overflowed.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// An active control stage could not be completed.
    #[error("stage failure: {0}")]
    StageFailure(String),

    /// File or serialization problem.
    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed JSON input.
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    /// Input violated a documented schema constraint (field named in the message).
    #[error("schema violation: {0}")]
    Schema(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn schema(msg: impl Into<String>) -> Self {
        Error::Schema(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
}
