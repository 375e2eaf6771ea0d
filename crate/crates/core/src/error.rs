use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("layout has no objects")]
    EmptyLayout,
    #[error("object {index}: bounding box {bbox:?} does not lie inside the image")]
    BoxOutOfBounds { index: usize, bbox: [f64; 4] },
    #[error("category id {id} is outside a vocabulary of {size}")]
    UnknownCategory { id: usize, size: usize },
    #[error("unknown category name {0:?}")]
    UnknownCategoryName(String),
    #[error("layout has {count} objects, at most {max} allowed")]
    TooManyObjects { count: usize, max: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("bounding box covers less than one pixel")]
    DegenerateBox,
    #[error("invalid shape category {0:?}")]
    InvalidCategory(String),
    #[error("file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("parse error: {0}")]
    ParseError(String),
    #[error("missing image referenced by annotation: {0}")]
    MissingImage(PathBuf),
    #[error("cannot fuse an empty object sequence")]
    EmptySequence,
    #[error("non-finite loss term {term}")]
    NonFiniteLoss { term: String },
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("checkpoint array {name} has shape {found}, config expects {expected}")]
    ConfigMismatch {
        name: String,
        expected: String,
        found: String,
    },
    #[error("row {row} is not a probability distribution (sum {sum})")]
    InvalidDistribution { row: usize, sum: f64 },
    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable identifier used in service responses and CLI messages.
    pub fn name(&self) -> &'static str {
        match self {
            Error::EmptyLayout => "EmptyLayout",
            Error::BoxOutOfBounds { .. } => "BoxOutOfBounds",
            Error::UnknownCategory { .. } | Error::UnknownCategoryName(_) => "UnknownCategory",
            Error::TooManyObjects { .. } => "TooManyObjects",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::DegenerateBox => "DegenerateBox",
            Error::InvalidCategory(_) => "InvalidCategory",
            Error::FileNotFound(_) => "FileNotFound",
            Error::ParseError(_) => "ParseError",
            Error::MissingImage(_) => "MissingImage",
            Error::EmptySequence => "EmptySequence",
            Error::NonFiniteLoss { .. } => "NonFiniteLoss",
            Error::CorruptCheckpoint(_) => "CorruptCheckpoint",
            Error::ConfigMismatch { .. } => "ConfigMismatch",
            Error::InvalidDistribution { .. } => "InvalidDistribution",
            Error::InsufficientSamples(_) => "InsufficientSamples",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::InvalidArgument(_) => "InvalidArgument",
            Error::Io(_) => "IoError",
            Error::Tensor(_) => "TensorError",
            Error::Image(_) => "ImageError",
            Error::Json(_) => "ParseError",
        }
    }

    /// True for errors caused by the caller's layout rather than the system.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::EmptyLayout
                | Error::BoxOutOfBounds { .. }
                | Error::UnknownCategory { .. }
                | Error::UnknownCategoryName(_)
                | Error::TooManyObjects { .. }
                | Error::ShapeMismatch(_)
                | Error::InvalidArgument(_)
                | Error::Json(_)
                | Error::ParseError(_)
        )
    }
}
