use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed file {path}: {reason}")]
    MalformedFile { path: PathBuf, reason: String },
    #[error("image has no pixels")]
    EmptyImage,
    #[error("class id {id} out of range for {num_classes} classes")]
    ClassIdOutOfRange { id: usize, num_classes: usize },
    #[error("invalid taxonomy: {0}")]
    InvalidTaxonomy(String),
    #[error("grid has {actual} cells but {width}x{height} needs {expected}")]
    SizeMismatch {
        width: usize,
        height: usize,
        expected: usize,
        actual: usize,
    },
    #[error("invalid run-length counts: {0}")]
    InvalidRuns(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("transition needs two distinct classes, got {0} twice")]
    SameClass(usize),
    #[error("template {template_id} out of range for {qtype}")]
    TemplateOutOfRange { qtype: String, template_id: usize },
    #[error("invalid template bank: {0}")]
    InvalidTemplate(String),
    #[error("invalid question spec: {0}")]
    InvalidSpec(String),
    #[error("rendered question has {words} words (allowed 4-15): {question:?}")]
    QuestionLength { question: String, words: usize },
    #[error("split ratios must be non-negative and sum to 1, got {0:?}")]
    BadRatios([f64; 3]),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("non-finite mask score at index {0}")]
    NonFiniteScore(usize),
    #[error("threshold must lie in (0, 1), got {0}")]
    BadThreshold(f64),
    #[error("no prediction for triplet {0}")]
    MissingPrediction(String),
    #[error("duplicate prediction for triplet {0}")]
    DuplicatePrediction(String),
    #[error("prediction refers to unknown triplet {0}")]
    UnknownTripletId(String),
    #[error("cannot access {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed JSON")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
