use thiserror::Error;

/// Errors raised by sketch construction, updates, merging and decoding.
#[derive(Debug, Error)]
pub enum SketchError {
    /// A parameter lies outside the domain the construction supports.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("index {index} out of range for domain of size {n}")]
    IndexOutOfRange { index: u64, n: u64 },

    /// Two sketches that must share a configuration do not.
    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),

    #[error("format error: {0}")]
    Format(String),

    /// The AMS estimate vanished although the main sketch holds mass.
    #[error("inconsistent stream: {0}")]
    InconsistentStream(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SketchError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(SketchError::InvalidParameter(msg.into()))
}
