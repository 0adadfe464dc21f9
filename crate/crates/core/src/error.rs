use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("loss node must be a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("node does not belong to this tape")]
    ForeignNode,

    #[error("invalid token id {id} (valid range {lo}..={hi})")]
    InvalidToken { id: usize, lo: usize, hi: usize },

    #[error("invalid lattice: {0}")]
    Lattice(String),

    #[error("brute-force enumeration refused: T+U = {0} exceeds 12")]
    EnumerationTooLarge(usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("non-finite loss at step {step} (utterance {utt_id})")]
    NanLoss { step: usize, utt_id: String },

    #[error("fusion weight {0} > 0 requires an external language model")]
    MissingFusionLm(f64),

    #[error("vocabulary mismatch: {0}")]
    VocabMismatch(String),

    #[error("corrupt file {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },

    #[error("unsupported format version {found} in {path} (expected {expected})")]
    Version {
        path: PathBuf,
        found: u32,
        expected: u32,
    },

    #[error("model kind mismatch: expected {expected}, found {found}")]
    KindMismatch { expected: String, found: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
