use std::path::PathBuf;

/// Errors produced anywhere in the recognition pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("input too short for {layer}: length {length}, need at least {required}")]
    TooShort {
        layer: String,
        length: usize,
        required: usize,
    },

    #[error("utterance {index}: {frames} frames cannot align a label of length {label_len} ({repeats} adjacent repeats)")]
    InfeasibleAlignment {
        index: usize,
        frames: usize,
        label_len: usize,
        repeats: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("vocabulary: {0}")]
    Vocab(String),

    #[error("audio {path}: {reason}")]
    Audio { path: PathBuf, reason: String },

    #[error("{path}:{line}: {reason}")]
    Manifest {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{0}")]
    Invalid(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
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

pub type Result<T, E = Error> = std::result::Result<T, E>;
