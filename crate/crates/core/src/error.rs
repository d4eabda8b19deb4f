use thiserror::Error;

/// Errors raised by the measure, transport and regression routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("degenerate density: all values are zero")]
    DegenerateDensity,

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("dimension mismatch: expected dim {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("measures live on different grids")]
    GridMismatch,

    #[error("weights must average to 1 (mean = {mean})")]
    WeightSum { mean: f64 },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(
        "sinkhorn did not converge in {iterations} iterations (marginal violation {violation:e})"
    )]
    NotConverged { iterations: usize, violation: f64 },

    #[error("sinkhorn scalings underflowed at lambda = {lambda}; enable log-domain iterations")]
    Underflow { lambda: f64 },

    #[error(
        "barycenter iterates diverged after {iterations} iterations; \
         try a smaller lambda (the entropic approximation breaks down for large lambda)"
    )]
    BarycenterDiverged { iterations: usize },

    #[error("problem size {size} exceeds the exact solver cap of {cap}")]
    SizeCap { size: usize, cap: usize },

    #[error("exact transport solver did not terminate after {0} pivots")]
    PivotLimit(usize),

    #[error("predictor covariance is singular")]
    SingularCovariance,

    #[error("bandwidth too small at x = {x:?}")]
    BandwidthTooSmall { x: Vec<f64> },

    #[error(
        "x = {x:?} lies outside the design range; local fitting is not suited for extrapolation"
    )]
    LocalExtrapolation { x: Vec<f64> },

    #[error("displacement at t = {t} moves mass outside the grid rectangle")]
    DomainExit { t: f64 },

    #[error("degenerate path: end-to-end distance is zero")]
    DegeneratePath,

    #[error("prediction failed at index {index}")]
    PathPoint {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("image encoding failed: {0}")]
    Image(String),
}

pub type Result<T> = std::result::Result<T, Error>;
