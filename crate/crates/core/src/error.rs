use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("duplicate object id {0:?}")]
    DuplicateId(String),

    #[error("schema violation: {0}")]
    SchemaViolation(String),

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("missing file {0}")]
    MissingFile(PathBuf),

    #[error("training set is empty")]
    EmptyTrainingSet,

    #[error("cannot build an index over an empty collection")]
    EmptyCollection,

    #[error("no encoder registered for modality {0:?}")]
    UnknownEncoder(String),

    #[error("encoder unavailable: {0}")]
    EncoderUnavailable(String),

    #[error("image decode failed: {0}")]
    Decode(String),

    #[error("index not built: {0}")]
    IndexNotBuilt(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
