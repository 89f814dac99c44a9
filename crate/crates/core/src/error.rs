use std::path::PathBuf;

use crate::trainer::DivergenceSnapshot;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("input shape mismatch: expected {expected}, got {got}")]
    InputShape { expected: usize, got: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },

    #[error("invalid distribution: {0}")]
    Distribution(String),

    #[error("non-finite gradient in parameter tensor `{tensor}`")]
    GradientDivergence { tensor: String },

    #[error("training diverged at iteration {}", .0.iteration)]
    TrainingDivergence(Box<DivergenceSnapshot>),

    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },

    #[error("record `{id}`: {reason}")]
    Record { id: String, reason: String },

    #[error("line {line}: unknown label `{label}`")]
    UnknownLabel { line: usize, label: String },

    #[error("invalid dataset header: {0}")]
    Header(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(&'static str),

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error("report: {0}")]
    Report(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::Parameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
