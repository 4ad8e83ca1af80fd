use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("vocabulary is empty after filtering")]
    EmptyVocabulary,

    #[error("format error at line {line}: {msg}")]
    Format { line: usize, msg: String },

    #[error("zero-norm vector has no direction")]
    ZeroVector,

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("training diverged at epoch {epoch} (loss = {loss})")]
    Divergence { epoch: usize, loss: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty document pool for active topic {0}")]
    Pool(String),

    #[error("schedule row {row}: {msg}")]
    Schedule { row: usize, msg: String },

    #[error("no in-vocabulary seed word for label {0:?}")]
    Label(String),

    #[error("embedding matrix has rank 0")]
    DegenerateEmbedding,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }

    /// Short machine-readable tag for the error family.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::EmptyVocabulary => "empty_vocabulary",
            Error::Format { .. } => "format",
            Error::ZeroVector => "zero_vector",
            Error::Dimension(_) => "dimension",
            Error::Numerical(_) => "numerical",
            Error::Divergence { .. } => "divergence",
            Error::InvalidConfig(_) => "invalid_config",
            Error::Pool(_) => "pool",
            Error::Schedule { .. } => "schedule",
            Error::Label(_) => "label",
            Error::DegenerateEmbedding => "degenerate_embedding",
            Error::Io { .. } => "io",
            Error::Json { .. } => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
