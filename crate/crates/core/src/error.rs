use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("qubit index {index} out of range for {n}-qubit register")]
    QubitOutOfRange { index: usize, n: usize },
    #[error("two-qubit gate needs distinct targets, got ({0}, {0})")]
    RepeatedTarget(usize),
    #[error("unsupported qubit count {0} (expected 1..=14)")]
    QubitCount(usize),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("state not normalized: norm^2 = {0}")]
    NotNormalized(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid cost matrix: {0}")]
    InvalidCost(String),
    #[error("marginal weights must sum to 1 (got {0})")]
    WeightSum(f64),
    #[error("numerical divergence at iteration {iteration}: {detail}")]
    Divergence { iteration: usize, detail: String },
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
