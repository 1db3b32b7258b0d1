use std::io;

use crate::cloud::ClassId;

/// Errors produced by the segmentation library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("invalid point cloud: {0}")]
    InvalidCloud(String),

    #[error("invalid class schema: {0}")]
    InvalidSchema(String),

    #[error("invalid merge map: {0}")]
    InvalidMerge(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("PLY header error: {0}")]
    PlyHeader(String),

    #[error("PLY body error: {0}")]
    PlyBody(String),

    #[error("big-endian PLY files are not supported")]
    BigEndianPly,

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("cloud has no labels")]
    MissingLabels,

    #[error("label {0} is outside the mapping domain")]
    LabelOutOfDomain(ClassId),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("length mismatch: expected {expected}, found {found} ({what})")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("grid parameters do not match: {0}")]
    GridMismatch(String),

    #[error("feature mismatch: {0}")]
    FeatureMismatch(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("stage-two label {label} is not a member of concatenated class {class}")]
    NotAMember { label: ClassId, class: String },

    #[error("coverage mismatch: {0}")]
    Coverage(String),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// `true` for failures caused by the filesystem rather than by the data.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
