use thiserror::Error;

/// Errors produced by the simulator core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch at layer {layer}: expected {expected}, found {found}")]
    Dimension {
        layer: usize,
        expected: usize,
        found: usize,
    },
    #[error("shape mismatch: {left:?} vs {right:?}")]
    Shape { left: Vec<usize>, right: Vec<usize> },
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("invalid model spec: {0}")]
    Spec(String),
    #[error("format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },
    #[error("unsupported model file version {found:?}")]
    Version { found: String },
    #[error("inconsistent data: {0}")]
    Consistency(String),
    #[error("training diverged at epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize },
    #[error("scenario error: {0}")]
    Scenario(String),
    #[error("cosine similarity undefined for a zero vector")]
    UndefinedSimilarity,
    #[error("protocol violation in round {round}: {message}")]
    Protocol { round: usize, message: String },
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
