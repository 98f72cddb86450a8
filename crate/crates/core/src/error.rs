use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("zero-norm vector passed to cosine distance")]
    ZeroNorm,

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("mask has no foreground locations")]
    EmptyForeground,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("variable belongs to a different tape")]
    ForeignVar,

    #[error("no memory stored for class {0}")]
    MissingBank(u64),

    #[error("invalid annotations: {0}")]
    InvalidAnnotations(String),

    #[error("class {0:?} has no instances to sample from")]
    NoInstances(Vec<u64>),

    #[error("shot count {0} is not present in the split")]
    MissingShot(usize),

    #[error("malformed mask: {0}")]
    MalformedMask(String),

    #[error("unknown category {0} in detections")]
    UnknownCategory(u64),

    #[error("unknown image {0} in detections")]
    UnknownImage(u64),

    #[error("crowd annotation {0} is not supported")]
    CrowdAnnotation(u64),

    #[error("detection {0} has no mask for segm evaluation")]
    MissingMask(usize),

    #[error("non-finite loss at step {0}")]
    Diverged(usize),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Error::Csv {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
