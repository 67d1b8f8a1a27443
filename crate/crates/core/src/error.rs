//! Crate-wide error type.

/// Errors produced by the sasa pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A caller broke a contract that upstream modules are supposed to
    /// guarantee (e.g. an all-masked softmax row).
    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("unsupported language: {0:?}")]
    UnsupportedLanguage(String),

    #[error("alignment failed for token {index}: {reason}")]
    Alignment { index: usize, reason: String },

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
