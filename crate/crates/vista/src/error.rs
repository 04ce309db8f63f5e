use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("stride must be at least 1, got {0}")]
    BadStride(usize),
    #[error("upsampling factor must be at least 1, got {0}")]
    BadFactor(usize),
    #[error("{channels} channels cannot be split into {heads} heads")]
    HeadMismatch { channels: usize, heads: usize },
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("token id {id} is outside the word vocabulary [3, {vocab})")]
    TokenOutOfVocab { id: usize, vocab: usize },
    #[error("question has {len} tokens, at most {max} fit between [SOS] and [EOC]")]
    TooLong { len: usize, max: usize },
    #[error("question has no tokens")]
    EmptyQuestion,
    #[error("target index {target} outside {classes} classes")]
    BadTarget { target: usize, classes: usize },
    #[error("answer {0:?} is not in the model's vocabulary")]
    UnknownAnswer(String),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("loss diverged at step {0}")]
    Divergence(usize),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("cannot access {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed JSON")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Data(#[from] cdqag_core::Error),
}

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> Error {
    Error::ShapeMismatch {
        op,
        detail: detail.into(),
    }
}
