use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{doc_id}: no parseable cue; first malformed cue is #{cue} ({reason})")]
    SubtitleParse {
        doc_id: String,
        cue: usize,
        reason: String,
    },
    #[error("training data contains a single class; both labels are required")]
    SingleClass,
    #[error("unknown label `{0}`")]
    UnknownLabel(String),
    #[error("label `{0}` has no training examples")]
    MissingLabel(String),
    #[error("intent `{0}` has no seed sentences")]
    MissingIntentSeeds(String),
    #[error("label set: {0}")]
    LabelSet(String),
    #[error("empty dialog")]
    EmptyDialog,
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("test set `{set}` has {available} dialogs, {requested} requested")]
    InsufficientTestSet {
        set: String,
        available: usize,
        requested: usize,
    },
    #[error("{path}:{line}: {message}")]
    Record {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{0}")]
    Invalid(String),
    #[error("tokenizer: {0}")]
    Tokenizer(String),
    #[error(transparent)]
    Tensor(#[from] empdial_tensor::TensorError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
