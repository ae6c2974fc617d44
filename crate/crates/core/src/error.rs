//! Error types shared across the library.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes, layer wiring, or constraint parameters are inconsistent.
    #[error("configuration error: {0}")]
    Config(String),

    /// Caller-supplied data is invalid (e.g. label out of range).
    #[error("input error: {0}")]
    Input(String),

    /// A byte stream does not match the expected file format.
    #[error("format error: {0}")]
    Format(String),

    /// Paired files disagree with each other (e.g. image/label counts).
    #[error("consistency error: {0}")]
    Consistency(String),

    /// An operation received input it cannot produce a meaningful result for.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Training produced a non-finite loss.
    #[error("divergence at iteration {iteration}: {message}")]
    Divergence { iteration: usize, message: String },

    /// A weight was expected to sit exactly on a codebook entry but does not.
    #[error("exactness error: {0}")]
    Exactness(String),

    /// A run configuration failed schema validation.
    #[error("config schema error: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable process exit code per error category, used by the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Input(_) => 3,
            Error::Format(_) => 4,
            Error::Consistency(_) => 5,
            Error::Degenerate(_) => 6,
            Error::Divergence { .. } => 7,
            Error::Exactness(_) => 8,
            Error::Schema(_) => 9,
            Error::Io(_) => 10,
        }
    }
}
