use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("topology error: {0}")]
    Topology(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("iterate diverged at iteration {iteration}")]
    Divergence { iteration: usize },

    #[error("oracle error: {0}")]
    Oracle(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn param<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Parameter(msg.into()))
}

pub(crate) fn dim<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Dimension(msg.into()))
}
