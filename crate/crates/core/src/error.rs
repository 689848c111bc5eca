use thiserror::Error;

/// Errors raised by model construction, discretization, solvers and pipelines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("non-stationary model: {0}")]
    NonStationaryModel(String),
    #[error("degenerate grid: need at least 2 points, got {0}")]
    DegenerateGrid(usize),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("negative SDF value {value} at x={x:?}, x'={x_next:?}")]
    NegativeSdf { value: f64, x: Vec<f64>, x_next: Vec<f64> },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("zero quadrature weight at grid index {0}")]
    ZeroWeight(usize),
    #[error("power iteration did not converge in {0} iterations")]
    NoConvergence(usize),
    #[error("power iterate lost strict positivity at grid index {index} (value {value})")]
    NonPositiveIterate { index: usize, value: f64 },
    #[error("operator of size {n} exceeds the dense limit {limit}")]
    TooLarge { n: usize, limit: usize },
    #[error("zero bond price at grid index {index}, horizon {horizon}")]
    ZeroBondPrice { index: usize, horizon: usize },
    #[error("twisted kernel row {row} sums to {sum}")]
    NonStochasticKernel { row: usize, sum: f64 },
    #[error("path state {0:?} cannot be evaluated on the grid")]
    PathOffGrid(Vec<f64>),
    #[error("uniqueness failed: {0} nonnegative eigenvectors")]
    UniquenessFailed(usize),
    #[error("theorem conclusions violated: assertions {:?} failed", .0.failed())]
    ConclusionViolated(Box<crate::spectral::TheoremReport>),
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
