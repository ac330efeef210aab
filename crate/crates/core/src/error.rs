use std::path::PathBuf;

use diffmath::DiffError;
use thiserror::Error;

use crate::explainer::ExplainerNet;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("node {node} out of range for a graph with {num_nodes} nodes")]
    NodeIndex { node: usize, num_nodes: usize },
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("{file}:{line}: {msg}")]
    Parse { file: String, line: usize, msg: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("explainer training diverged at epoch {epoch}")]
    ExplainerDiverged { epoch: usize, last_good: Box<ExplainerNet> },
    #[error("AUC undefined: {0}")]
    UndefinedAuc(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
