use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error in layer {layer}: {detail}")]
    Shape { layer: usize, detail: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("partition error: {0}")]
    Partition(String),

    #[error("assembly error: {0}")]
    Assembly(String),

    #[error("aggregation error: {0}")]
    Aggregation(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("client {client} diverged (non-finite loss)")]
    Diverged { client: usize },

    #[error("parse error in {path} at line {line}: {detail}")]
    Parse {
        path: PathBuf,
        line: usize,
        detail: String,
    },

    #[error("ingestion error: {0}")]
    Ingestion(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(layer: usize, detail: impl Into<String>) -> Self {
        Error::Shape {
            layer,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
