use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh configuration: {0}")]
    InvalidMesh(String),

    #[error("unsupported quadrature order {0} (supported: 2..=5)")]
    UnsupportedQuadrature(usize),

    #[error("invalid material parameters: {0}")]
    InvalidParams(String),

    #[error("invalid time grid: {0}")]
    InvalidTimeGrid(String),

    #[error("triplet ({row}, {col}) out of bounds for {n_rows}x{n_cols} matrix")]
    IndexOutOfBounds {
        row: usize,
        col: usize,
        n_rows: usize,
        n_cols: usize,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("step {step}: non-finite values in {field}")]
    NonFinite { step: usize, field: &'static str },

    #[error("step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("config error at line {line}, key `{key}`: {message}")]
    Config {
        key: String,
        line: usize,
        message: String,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn at_step(self, step: usize) -> Self {
        match self {
            e @ (Error::NonFinite { .. } | Error::Step { .. }) => e,
            e => Error::Step {
                step,
                source: Box::new(e),
            },
        }
    }
}
