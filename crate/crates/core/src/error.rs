use std::path::PathBuf;

use crate::tensor::BoundedTensor;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid bounds at index {index}: lower {lower} > upper {upper}")]
    InvalidBounds { index: usize, lower: f64, upper: f64 },

    #[error("invalid graph: {0}")]
    Graph(String),

    #[error("cycle detected in graph")]
    Cycle,

    #[error("unsupported operator: {0}")]
    UnsupportedOperator(String),

    #[error("unsupported data type {data_type} for tensor '{tensor}'")]
    UnsupportedDataType { tensor: String, data_type: i32 },

    #[error("malformed onnx model: {0}")]
    Onnx(String),

    #[error("vnnlib: {0}")]
    VnnLib(String),

    #[error("gradient tape: {0}")]
    Tape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("analysis timed out")]
    Timeout {
        /// Best bounds known when the deadline hit, one entry per spec branch.
        partial: Vec<BoundedTensor>,
    },

    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }
}
