//! Error types shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {details}")]
    ShapeMismatch { op: &'static str, details: String },

    #[error("invalid argument for {op}: {details}")]
    InvalidArgument { op: &'static str, details: String },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("backward already ran on this graph; build a new graph before calling again")]
    BackwardTwice,

    #[error("non-finite value produced by {op} (strict finite checks enabled)")]
    NonFinite { op: &'static str },

    #[error("non-finite gradient for parameter {name}")]
    NonFiniteGrad { name: String },

    #[error("invalid model configuration: {0}")]
    Config(String),

    #[error("{file}: bad magic number {found:#010x}, expected {expected:#010x}")]
    BadMagic {
        file: String,
        found: u32,
        expected: u32,
    },

    #[error("{file}: truncated payload, expected {expected} bytes, got {got}")]
    Truncated {
        file: String,
        expected: usize,
        got: usize,
    },

    #[error("image/label count mismatch: {images} images vs {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("label {label} out of range for {num_classes} classes (record {index})")]
    LabelOutOfRange {
        label: u32,
        num_classes: usize,
        index: usize,
    },

    #[error("{file}: {len} bytes is not a multiple of the {record} byte record size")]
    RecordAlignment {
        file: String,
        len: usize,
        record: usize,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn shape(op: &'static str, details: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            details: details.into(),
        }
    }

    pub fn invalid(op: &'static str, details: impl Into<String>) -> Self {
        Error::InvalidArgument {
            op,
            details: details.into(),
        }
    }
}
