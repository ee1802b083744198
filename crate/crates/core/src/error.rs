use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("node index {index} out of range for a network of {n} nodes")]
    NodeOutOfRange { index: usize, n: usize },
    #[error("self-loop on node {0} is not allowed")]
    SelfLoop(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid model specification: {0}")]
    InvalidSpec(String),
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("negative count {value} at node {node}")]
    NegativeCount { node: usize, value: f64 },
    #[error("intensity {value} below admissible floor at node {node}, time {time}")]
    IntensityTooSmall { node: usize, time: usize, value: f64 },
    #[error("parameters are outside the stability region: {0}")]
    Unstable(String),
    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),
    #[error("singular matrix: {0}")]
    Singular(String),
    #[error("event cap of {cap} exceeded while drawing copula-Poisson counts")]
    EventCap { cap: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("null model fit did not converge after {iterations} iterations")]
    NotConverged { iterations: usize },
    #[error("every grid point was degenerate")]
    AllGridPointsDegenerate,
    #[error("operation not available: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
