use std::path::PathBuf;

/// Errors produced anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("{path}:{line}: malformed record: {msg}")]
    MalformedRecord {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{path}:{line}: unknown label {label:?} (known: {known:?})")]
    UnknownLabel {
        path: PathBuf,
        line: usize,
        label: String,
        known: Vec<String>,
    },

    #[error("empty file: {0}")]
    EmptyFile(PathBuf),

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("class {class} has {have} examples, need {need}")]
    InsufficientClassExamples {
        class: usize,
        have: usize,
        need: usize,
    },

    #[error("unknown dataset {0:?}")]
    UnknownDataset(String),

    #[error("unknown variant {0:?}")]
    UnknownVariant(String),

    #[error("template error: {0}")]
    Template(String),

    #[error("render error: {0}")]
    Render(String),

    #[error("cannot truncate to {max_len}: {fixed} pieces are not removable")]
    Truncation { max_len: usize, fixed: usize },

    #[error("out-of-vocabulary token {0:?}")]
    OutOfVocabulary(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("sequence length {len} exceeds max_len {max_len}")]
    SequenceTooLong { len: usize, max_len: usize },

    #[error("no soft label for example {0}")]
    CoverageGap(usize),

    #[error("class count mismatch: {0}")]
    ClassMismatch(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, Error>;
