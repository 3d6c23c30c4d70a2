//! Error type shared by all modules.

use std::path::PathBuf;

/// Library-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to parse {path}: {message}")]
    Parse { path: PathBuf, message: String },

    /// Structural problem tied to a specific layer (0-based).
    #[error("layer {layer}: {message}")]
    Layer { layer: usize, message: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("simplex iteration cap exceeded after {pivots} pivots")]
    LpIterationLimit { pivots: usize },

    #[error("{unstable} unstable neurons exceed the activation-pattern budget of {cap}")]
    PatternBudget { unstable: usize, cap: usize },
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
