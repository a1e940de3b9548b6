use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failure modes of the embedding file readers.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("file truncated at byte offset {offset} (needed {needed} more bytes)")]
    Truncated { offset: u64, needed: u64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("label {label} at row {row} is not below the class count {classes}")]
    LabelOutOfRange { row: usize, label: u32, classes: u32 },
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("row {row} has norm {norm}, too far from 1 to re-normalize")]
    NotUnitNorm { row: usize, norm: f64 },
    #[error("trailing bytes after payload at offset {offset}")]
    TrailingBytes { offset: u64 },
    #[error("csv: {0}")]
    Csv(String),
    #[error("unsupported version {0}")]
    Version(u32),
}

impl FormatError {
    /// Stable numeric code, one per variant.
    pub fn code(&self) -> u32 {
        match self {
            FormatError::BadMagic { .. } => 1,
            FormatError::Truncated { .. } => 2,
            FormatError::DimensionMismatch(_) => 3,
            FormatError::LabelOutOfRange { .. } => 4,
            FormatError::NonFinite { .. } => 5,
            FormatError::NotUnitNorm { .. } => 6,
            FormatError::TrailingBytes { .. } => 7,
            FormatError::Csv(_) => 8,
            FormatError::Version(_) => 9,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("class index {index} out of range for {classes} classes")]
    ClassOutOfRange { index: usize, classes: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("degenerate class embedding for class {class}: norm {norm:e}")]
    DegenerateEmbedding { class: usize, norm: f64 },
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("numeric abort at epoch {epoch}, sample {index}: {reason}")]
    NumericAbort { epoch: usize, index: usize, reason: String },
    #[error("empty dataset: {0}")]
    EmptyDataset(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
