use thiserror::Error;

use crate::operator::SolveReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("invalid coefficient: {0}")]
    InvalidCoefficient(String),

    #[error("shift k = {k} is below the floor {floor}")]
    ShiftBelowFloor { k: f64, floor: f64 },

    #[error("domain mismatch: {0}")]
    DomainMismatch(String),

    #[error("invalid solver tolerance {0}; expected a value in (1e-14, 1e-2)")]
    InvalidTolerance(f64),

    #[error(
        "solver did not converge: relative residual {:.3e} after {} iterations",
        .0.residual,
        .0.iterations
    )]
    NonConvergence(SolveReport),

    #[error("invalid source: {0}")]
    InvalidSource(String),

    #[error("invalid sampling request: {0}")]
    Sampling(String),

    #[error("power-law fit failed: {0}")]
    Fit(String),

    #[error("invalid shape: {0}")]
    Shape(String),

    #[error("invalid anomaly: {0}")]
    InvalidAnomaly(String),

    #[error("anomaly under-resolved: D covers {nodes} nodes, need at least {required}")]
    UnderresolvedAnomaly { nodes: usize, required: usize },

    #[error("series hypothesis violated: max |mu_a n(x)| = {0:.4} >= 1")]
    SeriesHypothesis(f64),

    #[error("insufficient coverage: {0}")]
    Coverage(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
