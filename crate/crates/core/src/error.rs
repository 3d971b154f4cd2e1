use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed RLE: {0}")]
    MalformedRle(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("mask has no foreground pixels")]
    EmptyMask,
    #[error("class id {class} outside [1, {z}]")]
    ClassOutOfRange { class: u32, z: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("parameter file version/shape mismatch: {0}")]
    VersionMismatch(String),
    #[error("corrupt file {path}: {reason}")]
    CorruptFile { path: PathBuf, reason: String },
    #[error("need {needed} eligible tracks, database has {available}")]
    InsufficientTracks { needed: usize, available: usize },
    #[error("triplet batch contains a single identity")]
    SingleIdentityBatch,
    #[error("frame {got} does not follow frame {previous}")]
    NonMonotonicFrame { previous: i64, got: i64 },
    #[error("overlapping masks in frame {frame}")]
    OverlappingMasks { frame: u32 },
    #[error("ground truth contains no instances")]
    EmptyGroundTruth,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("parse error in {path} line {line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
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

    /// True for failures caused by reading or writing files, as opposed to
    /// invalid content.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
