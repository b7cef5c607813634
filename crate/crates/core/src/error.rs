use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty database")]
    EmptyDatabase,
    #[error("missing tags file: {0}")]
    MissingTagsFile(PathBuf),
    #[error("image referenced in tags but absent: {0}")]
    MissingImage(String),
    #[error("image {0} has no tags")]
    Untagged(String),
    #[error("unreadable raster {path}: {source}")]
    Raster {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed {what} in {path}: {message}")]
    Format {
        what: &'static str,
        path: PathBuf,
        message: String,
    },
    #[error("unknown label id {0}")]
    UnknownLabel(usize),
    #[error("unknown label name {0:?}")]
    UnknownLabelName(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: String, found: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("empty label set")]
    EmptyLabelSet,
    #[error("empty segment {0}")]
    EmptySegment(usize),
    #[error("reference {0} has no segments")]
    EmptyReference(usize),
    #[error("no references retrieved")]
    NoReferences,
    #[error("non-finite energy at iteration {iteration}")]
    NonFiniteEnergy { iteration: usize },
}

impl Error {
    /// Process exit status used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonFiniteEnergy { .. } => 3,
            Error::InvalidArgument(_) => 1,
            _ => 2,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn raster(path: impl Into<PathBuf>, source: image::ImageError) -> Self {
        Error::Raster {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dims(expected: impl ToString, found: impl ToString) -> Self {
        Error::DimensionMismatch {
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}
