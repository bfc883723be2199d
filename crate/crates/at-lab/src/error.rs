//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: left {left:?}, right {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid shape {shape:?} for {len} values")]
    InvalidShape { shape: Vec<usize>, len: usize },

    #[error("expected a 2-D tensor in {op}, got shape {shape:?}")]
    NotMatrix { op: &'static str, shape: Vec<usize> },

    #[error("backward requires a scalar, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },

    #[error("label {label} out of range for {classes} classes at row {row}")]
    LabelOutOfRange {
        row: usize,
        label: usize,
        classes: usize,
    },

    #[error("architecture mismatch: {left:?} vs {right:?}")]
    ArchMismatch { left: Vec<usize>, right: Vec<usize> },

    #[error("missing gradient for {name}")]
    MissingGradient { name: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("bad IDX magic number in {path}: expected {expected:#010x}, got {got:#010x}")]
    IdxBadMagic {
        path: String,
        expected: u32,
        got: u32,
    },

    #[error("IDX image/label count mismatch: {images} images vs {labels} labels")]
    IdxCountMismatch { images: usize, labels: usize },

    #[error("truncated IDX file {path}: expected {expected} bytes of payload, got {got}")]
    IdxTruncated {
        path: String,
        expected: usize,
        got: usize,
    },

    #[error("unknown attack name {0:?} (expected pgd10, pgd100, cw100 or none)")]
    UnknownAttack(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
