use std::path::PathBuf;

use crate::types::Label;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("correction magnitude g must be non-negative, got {0}")]
    NegativeMagnitude(f64),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("length mismatch: {preds} predictions vs {gold} gold labels")]
    LengthMismatch { preds: usize, gold: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("facet group {0:?} is empty")]
    EmptyFacet(String),

    #[error("no head for facet {0:?}")]
    MissingFacet(String),

    #[error("class {0} is absent")]
    MissingClass(Label),

    #[error("power iteration for component {component} did not converge (residual {residual:e})")]
    NoConvergence { component: usize, residual: f64 },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: unknown label {value:?}")]
    UnknownLabel { line: usize, value: String },

    #[error("duplicate sample id {0:?}")]
    DuplicateId(String),

    #[error("record {id:?}: h has length {found}, dataset d = {expected}")]
    RecordDimension {
        id: String,
        expected: usize,
        found: usize,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
