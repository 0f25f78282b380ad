use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("log of zero")]
    LogOfZero,
    #[error("lambda at index {index} is zero: invalid tower")]
    ZeroLambda { index: usize },
    #[error("branch hits puncture at stage {stage}")]
    PunctureHit { stage: usize },
    #[error("branch path length {path} does not match tower length {towers}")]
    PathLengthMismatch { path: usize, towers: usize },
    #[error("no nonzero branch image for target point {index} after {attempts} escalations")]
    PunctureCollision { index: usize, attempts: usize },
    #[error("target set must contain the origin")]
    MissingOrigin,
    #[error("target set must contain at least one point other than the origin")]
    NoSecondPoint,
    #[error("target set has no primitives")]
    EmptyTargetSet,
    #[error("sequence point {index} lies outside the target set (distance {distance:.3e})")]
    PointOutsideTarget { index: usize, distance: f64 },
    #[error("sequence point {index} must be nonzero")]
    ZeroSequencePoint { index: usize },
    #[error("level {level}: no m <= 2^40 satisfies the gap budget (last gap {last_gap:.3e} > {budget:.3e})")]
    BuildBudgetExhausted { level: usize, last_gap: f64, budget: f64 },
    #[error("level {level}: backbone product log-magnitude {log_mag:.1} exceeds the evaluation cap")]
    ProductOverflow { level: usize, log_mag: f64 },
    #[error("sup-norm sampling escaped at stage {stage}: difference unbounded on the disk")]
    UnboundedOnDisk { stage: usize },
    #[error("escaped value at stage {stage} where a finite one is required")]
    EscapedValue { stage: usize },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("newton iteration failed: {0}")]
    NewtonFailed(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("artifact: {0}")]
    Artifact(String),
}

pub type CoreResult<T> = Result<T, CoreError>;
