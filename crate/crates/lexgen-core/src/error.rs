//! Error type shared across the crate, with the process exit-code mapping
//! used by the CLI (0 success, 1 usage/config, 2 data, 3 internal).

use thiserror::Error;

pub type Result<T> = std::result::Result<T, LexError>;

#[derive(Debug, Error)]
pub enum LexError {
    /// Tensor shape mismatch. Always a programming error, never bad input.
    #[error("shape error: {0}")]
    Shape(String),

    /// Invalid configuration value or flag combination.
    #[error("config error: {0}")]
    Config(String),

    /// Caller misuse of an API or command (bad arguments, wrong call order).
    #[error("usage error: {0}")]
    Usage(String),

    /// Input data that parses but violates a contract (bad ids, counts, ...).
    #[error("data error: {0}")]
    Data(String),

    /// Token or language tag missing from the vocabulary.
    #[error("vocab error: {0}")]
    Vocab(String),

    /// Malformed input file; `line` is 1-based.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Checkpoint that cannot be loaded (corruption, version or shape skew).
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// An internal assertion failed; indicates a bug, not bad input.
    #[error("internal error: {0}")]
    Internal(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl LexError {
    pub fn parse(line: usize, msg: impl Into<String>) -> Self {
        LexError::Parse { line, msg: msg.into() }
    }

    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            LexError::Usage(_) | LexError::Config(_) | LexError::Vocab(_) => 1,
            LexError::Data(_)
            | LexError::Parse { .. }
            | LexError::Checkpoint(_)
            | LexError::Io(_) => 2,
            LexError::Shape(_) | LexError::Internal(_) => 3,
        }
    }
}
