use std::path::PathBuf;

use thiserror::Error;

use crate::layer::LayerIndex;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot abstract empty cluster")]
    EmptyCluster,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("enlargement factor must be nonnegative, got {0}")]
    NegativeGamma(f64),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid layer index {index} for a model with {layers} layers")]
    InvalidLayer { index: LayerIndex, layers: usize },

    #[error("layer {0} is missing")]
    MissingLayer(LayerIndex),

    #[error("predicted class {class} is outside the known classes 0..{known}")]
    UnknownClass { class: usize, known: usize },

    #[error("operation requires the box domain, monitor uses {0}")]
    UnsupportedDomain(String),

    #[error("cannot normalize a vector whose components sum to zero")]
    ZeroSum,

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
        if expected == found {
            Ok(())
        } else {
            Err(Error::DimensionMismatch { expected, found })
        }
    }
}
