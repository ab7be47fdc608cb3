use thiserror::Error;

/// Errors surfaced by configuration checks and operator contracts.
///
/// Noise overflow inside a ciphertext is *not* an error: it silently yields a
/// wrong value and is only detectable through the mirror oracle or a failed
/// decryption check. Everything catchable before touching ciphertext data is.
#[derive(Debug, Error)]
pub enum Error {
    /// Inconsistent or unsupported parameter combination.
    #[error("configuration error: {0}")]
    Config(String),

    /// A ciphertext or key was used at the wrong level of the hierarchy.
    #[error("level mismatch: expected {expected}, got {actual}")]
    LevelMismatch { expected: &'static str, actual: &'static str },

    /// Fixed-point formats of the operands disagree, or a schedule was
    /// executed against operands it was not planned for.
    #[error("format mismatch: {0}")]
    FormatMismatch(String),

    /// A plaintext value does not fit the requested encoding.
    #[error("range error: {0}")]
    Range(String),

    /// Malformed serialized data.
    #[error("decode error: {0}")]
    Decode(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn range(msg: impl Into<String>) -> Self {
        Error::Range(msg.into())
    }
}
