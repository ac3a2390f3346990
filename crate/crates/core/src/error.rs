use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = PaecError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum PaecError {
    #[error("empty signal: {0}")]
    EmptySignal(&'static str),
    #[error("sample rate {found} Hz, expected {expected} Hz")]
    SampleRate { expected: u32, found: u32 },
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("degenerate energy: {0}")]
    DegenerateEnergy(&'static str),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("geometry: {0}")]
    Geometry(String),
    #[error("corpus: {0}")]
    Corpus(String),
    #[error("manifest {path}:{line}: {msg}")]
    Manifest {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("embedding provider: {0}")]
    Provider(String),
    #[error("duration: need at least {needed_s} s, got {got_s:.3} s")]
    Duration { needed_s: f64, got_s: f64 },
    #[error("speaker conditioning: {0}")]
    Conditioning(String),
    #[error("training target: {0}")]
    Target(String),
    #[error("training strategy: {0}")]
    Strategy(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("checkpoint {path}: {msg}")]
    Checkpoint { path: PathBuf, msg: String },
    #[error("wav {path}: {msg}")]
    Wav { path: PathBuf, msg: String },
    #[error("external scorer: {0}")]
    Hook(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl PaecError {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        PaecError::Parameter(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        PaecError::Shape(msg.into())
    }
}
