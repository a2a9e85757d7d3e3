use thiserror::Error;

/// Crate-wide error type.
///
/// Variants are grouped by subsystem so the CLI can map them onto exit codes
/// (validation, worker failure, non-convergence).
#[derive(Error, Debug)]
pub enum Error {
    #[error("graph: {0}")]
    Graph(String),

    #[error("data: {0}")]
    Data(String),

    #[error("model: {0}")]
    Model(String),

    #[error("numeric: {0}")]
    Numeric(String),

    #[error("config: {0}")]
    Config(String),

    #[error("worker: {0}")]
    Worker(String),

    #[error("non-convergence: {0}")]
    NonConvergence(String),

    #[error("budget exceeded: {0}")]
    Budget(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn graph(msg: impl Into<String>) -> Self {
        Error::Graph(msg.into())
    }
    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }
    pub fn model(msg: impl Into<String>) -> Self {
        Error::Model(msg.into())
    }
    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub fn worker(msg: impl Into<String>) -> Self {
        Error::Worker(msg.into())
    }
}
