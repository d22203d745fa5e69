use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("dataset is empty: {0}")]
    EmptyDataset(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("kernel family `{0}` has no random-binning density")]
    UnsupportedKernel(&'static str),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("need at least {needed} points for {k} clusters, got {got}")]
    TooFewPoints { needed: usize, k: usize, got: usize },

    #[error("input contains NaN at row {row}, column {col}")]
    NaN { row: usize, col: usize },

    #[error("non-positive degree {value} at row {row}")]
    NonPositiveDegree { row: usize, value: f64 },

    #[error("exact spectral clustering refused: N = {n} exceeds the dense limit of {limit}")]
    DenseLimit { n: usize, limit: usize },

    #[error("eigensolver did not converge: worst relative residual {worst:.3e} after {matvecs} matvecs")]
    NotConverged { worst: f64, matvecs: usize },

    #[error("missing metric `{metric}` for method `{method}`")]
    MissingMetric { method: String, metric: &'static str },

    #[error("insufficient data: {0}")]
    Insufficient(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
