use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty corpus")]
    EmptyCorpus,

    #[error("invalid vocabulary: {0}")]
    InvalidVocabulary(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("overlapping reorder spans")]
    OverlappingSpans,

    #[error("zero-norm embedding")]
    ZeroNorm,

    #[error("no masked positions")]
    NoMaskedPositions,

    #[error("malformed pairing: {0}")]
    MalformedPairing(String),

    #[error("zero variance")]
    ZeroVariance,

    #[error("view of length {len} exceeds max_positions {max}")]
    OverLength { len: usize, max: usize },

    #[error("non-finite loss{}", batch_suffix(*.batch))]
    NonFiniteLoss { batch: Option<u64> },

    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("checkpoint: bad magic")]
    BadMagic,

    #[error("checkpoint: unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("checkpoint: truncated ({0})")]
    Truncated(String),

    #[error("checkpoint: checksum mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    Checksum { stored: u32, computed: u32 },

    #[error("config mismatch: {0}")]
    ConfigMismatch(String),

    #[error("config: {0}")]
    Config(String),

    #[error("malformed {what} at line {line}: {reason}")]
    Parse {
        what: &'static str,
        line: usize,
        reason: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn batch_suffix(batch: Option<u64>) -> String {
    batch.map(|b| format!(" at batch {b}")).unwrap_or_default()
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
