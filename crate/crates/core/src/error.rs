use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, DginError>;

#[derive(Debug, Error)]
pub enum DginError {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("softmax row {row} is fully masked")]
    DegenerateMask { row: usize },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("non-finite gradient in parameter `{name}`")]
    NonFiniteGradient { name: String },

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("AUC is undefined: {0}")]
    UndefinedAuc(&'static str),

    #[error("value is NaN")]
    NaN,

    #[error("{path}: {malformed} of {total} lines malformed (first: line {first_line}: {first_error})")]
    TooManyMalformed {
        path: PathBuf,
        malformed: usize,
        total: usize,
        first_line: usize,
        first_error: String,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("schema mismatch: checkpoint was saved against schema {expected}, current schema is {found}")]
    SchemaMismatch { expected: String, found: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl DginError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DginError::Io {
            path: path.into(),
            source,
        }
    }
}
