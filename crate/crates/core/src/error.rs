use std::path::PathBuf;

use thiserror::Error;

use crate::pipeline::RunManifest;
use crate::runtime::OverflowReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Bit-vector or tensor widths/lengths do not line up.
    #[error("shape error: {0}")]
    Shape(String),
    /// A value does not fit the requested representation.
    #[error("range error: {0}")]
    Range(String),
    /// Inconsistent hyperparameters, dataset requests or solver settings.
    #[error("config error: {0}")]
    Config(String),
    /// Malformed binary input (IDX).
    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },
    /// Malformed line-oriented text input (DIMACS, dataset cache, manifests).
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("assignment does not cover weight variable `{label}`")]
    Decode { label: String },
    #[error("arithmetic overflow: {0}")]
    Overflow(OverflowReport),
    #[error("solver binary `{command}` could not be started: {source}")]
    SolverMissing {
        command: String,
        #[source]
        source: std::io::Error,
    },
    #[error("unparseable solver output: {0}")]
    SolverOutput(String),
    /// A solver answer failed local re-checking.
    #[error("certification failed: {0}")]
    Certification(String),
    /// No batch produced a certified model.
    #[error("training failed: no batch produced a model\n{0}")]
    TrainingFailed(Box<RunManifest>),
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by the environment (solver binary unavailable)
    /// rather than by the problem instance.
    pub fn is_environment(&self) -> bool {
        matches!(self, Error::SolverMissing { .. })
    }
}
