use thiserror::Error;

pub type Result<T> = std::result::Result<T, CrvError>;

#[derive(Debug, Error)]
pub enum CrvError {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid query: {0}")]
    InvalidQuery(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("soundness violation: {0}")]
    Soundness(String),

    #[error("guard exceeded: {0}")]
    Guard(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CrvError {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        CrvError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
