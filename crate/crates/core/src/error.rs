use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Load {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Schema {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("data file {0} contains no examples")]
    EmptyDataFile(PathBuf),

    #[error("invalid manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },

    #[error("split `{0}` is empty")]
    EmptySplit(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("{what} index {index} out of range (len {len})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("token id {id} outside vocabulary of size {vocab_size}")]
    TokenOutOfVocabulary { id: usize, vocab_size: usize },

    #[error("sequence of {len} tokens exceeds backend maximum {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("unknown language `{0}`")]
    UnknownLanguage(String),

    #[error("label `{label}` not in schema for language `{language}`")]
    UnknownLabel { language: String, label: String },

    #[error("embedding table restore failed: {0}")]
    Integrity(String),

    #[error("non-finite loss {loss} at epoch {epoch}, step {step} (batch examples {examples:?})")]
    NonFiniteLoss {
        loss: f64,
        epoch: usize,
        step: usize,
        examples: Vec<usize>,
    },

    #[error("unknown report format `{0}`")]
    UnknownFormat(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag for error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Load { .. } => "load",
            Error::Schema { .. } => "schema",
            Error::EmptyDataFile(_) => "empty_data_file",
            Error::Manifest { .. } => "manifest",
            Error::EmptySplit(_) => "empty_split",
            Error::Config(_) => "config",
            Error::Shape(_) => "shape",
            Error::IndexOutOfRange { .. } => "index_out_of_range",
            Error::TokenOutOfVocabulary { .. } => "token_out_of_vocabulary",
            Error::SequenceTooLong { .. } => "sequence_too_long",
            Error::UnknownLanguage(_) => "unknown_language",
            Error::UnknownLabel { .. } => "unknown_label",
            Error::Integrity(_) => "integrity",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::UnknownFormat(_) => "unknown_format",
            Error::Checkpoint(_) => "checkpoint",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
