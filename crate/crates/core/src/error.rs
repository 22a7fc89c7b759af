use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid dimensions must be at least 1x1")]
    EmptyGrid,
    #[error("expected {expected} samples, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("non-finite sample at index {index}")]
    NonFinite { index: usize },
    #[error("image must have 1 to 3 channels, got {0}")]
    ChannelCount(usize),
    #[error("sample outside [0, 1]")]
    OutOfRange,
    #[error("raster dimensions do not match")]
    DimensionMismatch,
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("{path}: line {line}, column {column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
}

impl Error {
    /// Errors caused by bad caller input rather than internal failure.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, Error::NonFinite { .. })
    }
}
