//! Error types shared across the library.

use thiserror::Error;

/// Library-level error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("empty vector")]
    EmptyVector,

    #[error("zero start vector")]
    ZeroStart,

    #[error("start vector not in the range of B after {attempts} attempts")]
    StartNotInRange { attempts: usize },

    #[error("projected system is not positive definite even after diagonal jitter")]
    ProjectedSolveFailed,

    #[error("operator probe found negative curvature: x'Bx = {value:.3e}")]
    NotPositiveSemiDefinite { value: f64 },

    #[error("solver did not converge within {iterations} iterations (residual {residual:.3e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("deflation exhausted the range of B after {achieved} of {requested} columns")]
    DeflationExhausted { achieved: usize, requested: usize },

    #[error("view {view} degenerated (block norm {norm:.3e}) while extracting column {column}")]
    DegenerateView {
        view: usize,
        column: usize,
        norm: f64,
    },

    #[error("vanishing denominator trace for view {view}")]
    VanishingDenominator { view: usize },

    #[error("block grid is not symmetric at block ({s},{t})")]
    AsymmetricGrid { s: usize, t: usize },

    #[error("model {kind} requires {needed} labels")]
    LabelsRequired { kind: String, needed: String },

    #[error("model {kind} is not defined for a single view")]
    SingleViewUnsupported { kind: String },

    #[error("k = {k} out of range: must satisfy 1 <= k <= {max}")]
    InvalidK { k: usize, max: usize },

    #[error("k = {k} exceeds the achievable rank {rank}")]
    RankDeficient { k: usize, rank: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid labels: {0}")]
    InvalidLabels(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {file} at row {row}, column {col}: {detail}")]
    Parse {
        file: String,
        row: usize,
        col: usize,
        detail: String,
    },

    #[error("view {view} has {got} rows but {reference} has {expected}")]
    RowCountMismatch {
        view: String,
        got: usize,
        expected: usize,
        reference: String,
    },

    #[error("manifest error: {0}")]
    Manifest(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for errors caused by bad inputs rather than numerical breakdown.
    pub fn is_input_error(&self) -> bool {
        !matches!(
            self,
            Error::StartNotInRange { .. }
                | Error::ProjectedSolveFailed
                | Error::NotConverged { .. }
                | Error::DeflationExhausted { .. }
                | Error::DegenerateView { .. }
                | Error::VanishingDenominator { .. }
                | Error::NotPositiveSemiDefinite { .. }
        )
    }
}
