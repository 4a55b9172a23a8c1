use std::io;
use std::path::PathBuf;

use thiserror::Error;

use crate::autodiff::AutodiffError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("schema: {0}")]
    Schema(#[from] SchemaError),

    #[error("dataset line {line}: {message}")]
    Dataset { line: usize, message: String },

    #[error("unknown label id `{0}`")]
    UnknownLabel(String),

    #[error("unknown certainty class `{0}`")]
    UnknownCertainty(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("embedding file line {line}: {message}")]
    Embeddings { line: usize, message: String },

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error(transparent)]
    Autodiff(#[from] AutodiffError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SchemaError {
    #[error("could not parse schema JSON at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("schema has no labels")]
    Empty,
    #[error("duplicate label id `{id}` (entry {index})")]
    DuplicateId { id: String, index: usize },
    #[error("label `{id}` has unknown category `{category}`")]
    UnknownCategory { id: String, category: String },
    #[error("label `{id}` has an empty variant list")]
    EmptyVariants { id: String },
    #[error("label at entry {index} has an empty id")]
    EmptyId { index: usize },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by numerical breakdown rather than bad inputs.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NonFiniteLoss { .. } => true,
            Error::Autodiff(e) => e.is_numerical(),
            _ => false,
        }
    }
}
