use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read corpus root {path}: {reason}")]
    UnreadableRoot { path: PathBuf, reason: String },
    #[error("ambiguous or unknown label directory {path}: {reason}")]
    AmbiguousLabel { path: PathBuf, reason: String },
    #[error("no decodable images found under {0}")]
    EmptyCorpus(PathBuf),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("fold file {path}: {reason}")]
    FoldFile { path: PathBuf, reason: String },
    #[error("not enough patients: {0}")]
    TooFewPatients(String),
    #[error("image {width}x{height} is smaller than the {side}px patch")]
    ImageTooSmall { width: usize, height: usize, side: usize },
    #[error("raster shape mismatch: {0}")]
    Shape(String),
    #[error("feature file {path}, row {row}: {reason}")]
    FeatureFile { path: PathBuf, row: usize, reason: String },
    #[error("feature width mismatch: expected {expected}, got {actual}")]
    WidthMismatch { expected: usize, actual: usize },
    #[error("training data must contain both classes")]
    SingleClass,
    #[error("non-finite feature value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("insufficient images for {what}: need {needed}, have {available}")]
    Insufficient { what: String, needed: usize, available: usize },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("configuration: {0}")]
    Config(String),
    #[error("image decode {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Errors caused by what the caller asked for rather than by a failure
    /// while doing it.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::UnreadableRoot { .. }
                | Error::AmbiguousLabel { .. }
                | Error::EmptyCorpus(_)
                | Error::InvalidArgument(_)
                | Error::FoldFile { .. }
                | Error::Config(_)
        )
    }
}
