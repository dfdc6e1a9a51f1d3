use thiserror::Error;

/// Errors raised by the simulation library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("length mismatch: expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("non-finite state in {system} at step {step} (t = {t})")]
    BlowUp {
        system: String,
        step: u64,
        t: f64,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),

    #[error("manifest hash mismatch: checkpoint has {found}, run has {expected}")]
    HashMismatch { expected: String, found: String },

    #[error("incomplete record: {0}")]
    IncompleteRecord(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::LengthMismatch { expected, got })
    }
}

impl Error {
    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Argument(_) => "argument",
            Error::LengthMismatch { .. } => "length_mismatch",
            Error::BlowUp { .. } => "blow_up",
            Error::Config(_) => "config",
            Error::UnknownKey(_) => "unknown_key",
            Error::HashMismatch { .. } => "hash_mismatch",
            Error::IncompleteRecord(_) => "incomplete_record",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
