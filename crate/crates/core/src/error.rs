use std::io;

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("length error: expected {expected} bytes, found {found}")]
    Length { expected: usize, found: usize },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("undefined input: {0}")]
    UndefinedInput(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("numerical error: {0}")]
    Numeric(String),

    #[error("shape mismatch in layer {layer} ({kind}): {detail}")]
    Composition {
        layer: usize,
        kind: &'static str,
        detail: String,
    },

    #[error("state error: {0}")]
    State(String),

    #[error("configuration error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
