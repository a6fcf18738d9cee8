use thiserror::Error;

#[derive(Debug, Error)]
pub enum MfgError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("measure has no particles")]
    EmptyMeasure,
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),
    #[error("time {t} outside [0, {horizon}]")]
    TimeOutOfRange { t: f64, horizon: f64 },
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("pointwise optimizer exhausted its budget: {0}")]
    OptimizerBudget(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("iterate {iteration} has moment {moment:.6e} above the a-priori cap {cap:.6e}")]
    MomentCapExceeded {
        iteration: usize,
        moment: f64,
        cap: f64,
    },
    #[error("generic value-function recursion limited to {max} periods, got {periods}")]
    RecursionBudget { periods: usize, max: usize },
    #[error("stage {stage} did not converge (residual {residual:.3e})")]
    StageNotConverged { stage: usize, residual: f64 },
    #[error("rate fit needs at least 3 valid points, got {0}")]
    TooFewPoints(usize),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, MfgError>;
