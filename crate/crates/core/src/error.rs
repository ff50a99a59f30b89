use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Shape or dimension mismatch between tensors.
    #[error("dimension error: {0}")]
    Dim(String),

    /// Autodiff tape misuse (unknown node, backward from non-scalar, ...).
    #[error("tape error: {0}")]
    Tape(String),

    /// Binary format violation (bad magic, truncation, version skew).
    /// `offset` is the byte position at which the problem was detected.
    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },

    /// Invalid configuration values.
    #[error("config error: {0}")]
    Config(String),

    /// Entropy coder contract violation or truncated stream.
    #[error("coder error: {0}")]
    Coder(String),

    /// Non-finite values encountered during optimization.
    #[error("numerical divergence: {0}")]
    Divergence(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format { offset, msg: msg.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
