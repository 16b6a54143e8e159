use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NonSymmetric(f64),
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
    #[error("backward requires a 1x1 loss, got {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("energy threshold unreachable: {achieved:e} < {required:e}")]
    ThresholdUnreachable { achieved: f64, required: f64 },
    #[error("empty input")]
    EmptyInput,
    #[error("token id {id} out of range for vocabulary of size {vocab}")]
    IdOutOfRange { id: usize, vocab: usize },
    #[error("no free subspace: {free} free directions, rank {rank} requested")]
    NoFreeSubspace { free: usize, rank: usize },
    #[error("vocabulary windows of tasks {0} and {1} intersect")]
    WindowOverlap(usize, usize),
    #[error("sample generation stalled for task {0}; teacher never produced class {1}")]
    GenerationStalled(usize, usize),
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("tasks must be learned in order: expected task {expected}, got {got}")]
    OrderViolation { expected: usize, got: usize },
    #[error("accuracy matrix is missing its final row")]
    IncompleteMatrix,
    #[error("forgetting is undefined for a single task")]
    SingleTask,
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error("unknown strategy `{0}`")]
    UnknownStrategy(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Numeric failures map to a distinct CLI exit code.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NonSymmetric(_)
                | Error::NonFinite(_)
                | Error::NonScalarLoss { .. }
                | Error::ThresholdUnreachable { .. }
                | Error::NoFreeSubspace { .. }
        )
    }

    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::UnknownPreset(_)
                | Error::UnknownStrategy(_)
                | Error::WindowOverlap(..)
                | Error::Schema(_)
                | Error::Parse { .. }
        )
    }
}
