use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("sentinel token `{0}` is not allowed here")]
    Sentinel(String),

    #[error("invalid edit plan: {0}")]
    Plan(String),

    #[error("pointer cycle through position {0}")]
    Cycle(usize),

    #[error("position {0} is tagged KEEP but unreachable from [CLS]")]
    Unreachable(usize),

    #[error("beam search found no complete chain (best partial: {0:?})")]
    BeamExhausted(Vec<usize>),

    #[error("insertion mode mismatch: {0}")]
    ModeMismatch(String),

    #[error("{0}")]
    Alignment(String),

    #[error("expected {expected} predictions, got {got}")]
    PredictionCount { expected: usize, got: usize },

    #[error("input of {len} tokens exceeds the maximum length {max}")]
    TooLong { len: usize, max: usize },

    #[error("non-finite loss {0}")]
    NonFinite(f64),

    #[error("{0}")]
    Shape(String),

    #[error("{0}")]
    Metric(String),

    #[error("{0}")]
    Config(String),

    #[error("{0}")]
    Data(String),

    #[error("{path}: line {line}, column {column}: {message}")]
    Json {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
