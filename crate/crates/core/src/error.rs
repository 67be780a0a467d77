use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("no overlapping voxels between the two volumes")]
    EmptyOverlap,
    #[error("image is constant over the overlap region")]
    DegenerateImage,
    #[error("degenerate point configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("bounding box has non-positive extent on axis {axis}")]
    DegenerateBox { axis: usize },
    #[error("segment has zero length")]
    DegenerateSegment,
    #[error("input list is empty")]
    EmptyInput,
    #[error("no successful registration for volume {0}")]
    MissingTransform(String),
    #[error("matrix is not a rigid transform: {0}")]
    NotRigid(String),
    #[error("invalid volume: {0}")]
    InvalidVolume(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("malformed volume file at byte {offset}: {message}")]
    Format { offset: usize, message: String },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("I/O error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid JSON in {path}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T, E = FusionError> = std::result::Result<T, E>;

impl FusionError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FusionError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        FusionError::Json {
            path: path.into(),
            source,
        }
    }
}
