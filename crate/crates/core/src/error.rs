use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("infeasible missingness: {missing} missing slots exceed the capacity of {capacity} (each sample must keep one view)")]
    InfeasibleMask { missing: usize, capacity: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("negative evidence {value} for class {class}")]
    NegativeEvidence { class: usize, value: f64 },

    #[error("invalid opinion: {0}")]
    InvalidOpinion(String),

    #[error("invalid Dirichlet parameters: {0}")]
    InvalidDirichlet(String),

    #[error("total conflict when fusing view {view} into the accumulated opinion (1 - C = {margin:e})")]
    TotalConflict { view: usize, margin: f64 },

    #[error("fully certain fused opinion (u = 0) has no Dirichlet counterpart")]
    CertainOpinion,

    #[error("empty neighbor set")]
    EmptyNeighbors,

    #[error("covariance is not positive definite after raising jitter to {jitter:e}")]
    NotPositiveDefinite { jitter: f64 },

    #[error("imputing view {view} of sample {sample}: {source}")]
    Imputation {
        sample: usize,
        view: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("non-finite gradient in {path}")]
    NonFiniteGradient { path: String },

    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("sample {sample}, sampling {sampling}: {source}")]
    Sample {
        sample: usize,
        sampling: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("results: {0}")]
    Results(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::TotalConflict { .. }
            | Error::CertainOpinion
            | Error::NotPositiveDefinite { .. }
            | Error::NonFiniteGradient { .. }
            | Error::NonFiniteLoss { .. } => true,
            Error::Sample { source, .. } | Error::Imputation { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
