use thiserror::Error;

/// Errors surfaced by model construction, inference, and learning.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("C is singular (|det C| = {det:.3e})")]
    SingularC { det: f64 },

    #[error("subset kernel matrix is singular (basket size {size})")]
    SingularSubset { size: usize },

    #[error("stream overrun: declared length {declared}, got point at position {got}")]
    StreamOverrun { declared: usize, got: usize },

    #[error("instance too large: {0}")]
    TooLarge(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("local search exceeded the safety cap of {cap} iterations")]
    SearchCap { cap: usize },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {msg}")]
    Format { path: String, msg: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
