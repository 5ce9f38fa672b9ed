use std::path::PathBuf;

/// Errors raised anywhere in the pipeline.
///
/// Every variant maps to a short stable code (see [`Error::code`]) so the CLI
/// can print one machine-parseable line per failure.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("index out of range: {0}")]
    Index(String),

    #[error("length error: {0}")]
    Length(String),

    #[error("sample rate error: expected {expected} Hz, got {actual} Hz")]
    Rate { expected: u32, actual: u32 },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("training diverged at step {step}: {detail}")]
    Training { step: usize, detail: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("missing prerequisite checkpoint for phase `{phase}`: {path}")]
    Dependency { phase: String, path: PathBuf },

    #[error("checkpoint mismatch: {0}")]
    Checkpoint(String),

    #[error("trial set needs both classes: {0}")]
    Class(String),

    #[error("undefined similarity: {0}")]
    Similarity(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("wav error: {0}")]
    Wav(#[from] hound::Error),
}

impl Error {
    pub fn code(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::Index(_) => "index",
            Error::Length(_) => "length",
            Error::Rate { .. } => "rate",
            Error::Numeric(_) => "numeric",
            Error::Training { .. } => "training",
            Error::Parse(_) => "parse",
            Error::Config(_) => "config",
            Error::Dependency { .. } => "dependency",
            Error::Checkpoint(_) => "checkpoint",
            Error::Class(_) => "class",
            Error::Similarity(_) => "similarity",
            Error::Internal(_) => "internal",
            Error::Io { .. } => "io",
            Error::Wav(_) => "wav",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
