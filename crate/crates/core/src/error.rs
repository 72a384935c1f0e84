use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("index {index} out of range for length {len}")]
    Index { index: usize, len: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("missing audio for clip {clip_id}: {path}")]
    MissingAudio { clip_id: String, path: PathBuf },

    #[error("audio decode error for {path}: {msg}")]
    Audio { path: PathBuf, msg: String },

    #[error("recall undefined: label matrix has no positives")]
    UndefinedRecall,

    #[error("training diverged at step {step}: non-finite loss (bce={bce}, kd={kd}, sp={sp}, iusp={iusp})")]
    Divergence {
        step: usize,
        bce: f64,
        kd: f64,
        sp: f64,
        iusp: f64,
    },

    #[error("container format error: {0}")]
    Format(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable category used by the CLI's one-line error output.
    pub fn category(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid-input",
            Error::Index { .. } => "index",
            Error::Config(_) => "config",
            Error::Parse { .. } => "parse",
            Error::Io { .. } | Error::MissingAudio { .. } => "io",
            Error::Audio { .. } => "audio",
            Error::UndefinedRecall => "undefined-recall",
            Error::Divergence { .. } => "divergence",
            Error::Format(_) => "format",
        }
    }
}
