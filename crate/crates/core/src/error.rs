use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("dimension overflow: {0}")]
    DimensionOverflow(String),

    #[error("truncated payload: expected {expected} bytes, got {found}")]
    TruncatedPayload { expected: usize, found: usize },

    #[error("unexpected trailing bytes after payload")]
    TrailingBytes,

    #[error("invalid label code {0}")]
    InvalidLabel(u8),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("no ROI signal")]
    NoRoiSignal,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("undefined: {0}")]
    Undefined(String),

    #[error("model {model_id}: {source}")]
    Backend {
        model_id: u32,
        #[source]
        source: BackendError,
    },

    #[error("io error: {0}")]
    Io(#[from] io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        if e.is_io_error() {
            match e.into_kind() {
                csv::ErrorKind::Io(io) => Error::Io(io),
                _ => unreachable!("checked io kind"),
            }
        } else {
            Error::Parse(format!("csv: {e}"))
        }
    }
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn mismatch(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }

    pub fn is_backend(&self) -> bool {
        matches!(self, Error::Backend { .. })
    }
}

/// Failures of an external segmenter process.
#[derive(Debug, Error)]
pub enum BackendError {
    #[error("failed to spawn backend: {0}")]
    Spawn(io::Error),

    #[error("handshake failed: {0}")]
    Handshake(String),

    #[error("protocol version mismatch: backend speaks {0}, engine requires 1")]
    VersionMismatch(u32),

    #[error("response shape mismatch: expected {expected} payload bytes, got {found}")]
    ShapeMismatch { expected: usize, found: usize },

    #[error("response id {found} does not match request id {expected}")]
    IdMismatch { expected: u32, found: u32 },

    #[error("timed out after {0:?} waiting for backend")]
    Timeout(std::time::Duration),

    #[error("backend terminated")]
    Terminated,

    #[error("backend exited with status {0}")]
    NonZeroExit(i32),

    #[error("invalid probabilities in response: {0}")]
    InvalidResponse(String),
}
