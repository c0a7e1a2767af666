use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("unknown dtype `{0}`")]
    UnknownDtype(String),

    #[error("payload length mismatch: expected {expected} bytes, found {actual}")]
    PayloadLength { expected: usize, actual: usize },

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("dimension mismatch: {0}")]
    DimsMismatch(String),

    #[error("embedding kind mismatch: {0}")]
    KindMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("coordinate out of range: {0}")]
    OutOfRange(String),

    #[error("cosine similarity undefined for a zero-norm vector")]
    ZeroNorm,

    #[error("window has no valid labeled frame")]
    NoValidLabels,

    #[error("training diverged{}: {what}", .iteration.map(|i| format!(" at iteration {i}")).unwrap_or_default())]
    Divergence {
        iteration: Option<usize>,
        what: String,
    },

    #[error("windows do not overlap by exactly one frame: {0}")]
    NonOverlappingWindows(String),

    #[error("track table inconsistent with labeling: {0}")]
    TrackTable(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("cell placement failed for cell {cell} after {attempts} attempts")]
    Placement { cell: usize, attempts: usize },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
