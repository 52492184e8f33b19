use std::path::PathBuf;

use thiserror::Error;

/// Errors from model/encoder/LM/phrase file IO and validation.
///
/// Contract violations (bad arguments to pure scoring functions) panic
/// instead; `Error` is reserved for loadable inputs.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("{path}:{line}: parse error: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("{path}:{line}: cannot tokenize biasing phrase {phrase:?}")]
    UntokenizablePhrase {
        path: PathBuf,
        line: usize,
        phrase: String,
    },

    #[error("biasing phrase must be non-empty")]
    EmptyPhrase,
}

pub type Result<T> = std::result::Result<T, Error>;
