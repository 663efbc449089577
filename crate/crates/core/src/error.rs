use thiserror::Error;

/// Errors shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("state became non-finite at t = {t}")]
    NonFiniteState { t: f64 },

    #[error("path never crosses the secondary then the primary section")]
    NoCrossing,

    #[error("diffusion matrix numerically singular at path point {index}")]
    SingularDiffusion { index: usize },

    #[error("return leg exceeded the maximum flow time {max_time}")]
    Timeout { max_time: f64 },

    #[error("every sample launched from cell {cell} timed out")]
    EmptyRow { cell: usize },

    #[error("eigenvalue cluster near {value} is numerically defective")]
    DefectiveCluster { value: f64 },

    #[error("empty cell set")]
    EmptySet,

    #[error("(I - K_Ac) is numerically singular: excursions do not return")]
    NonReturning,

    #[error("power iteration did not converge within {cap} steps")]
    NoGap { cap: usize },

    #[error("principal eigenfunction entry {index} is below {min:e}")]
    ZeroEigenfunction { index: usize, min: f64 },

    #[error("linear system for {what} is numerically singular")]
    SingularSystem { what: &'static str },

    #[error("Laplace condition e^u rho(K_Ac) < 1 violated: e^u rho = {value}")]
    LaplaceDivergence { value: f64 },

    #[error("balls {i} and {j} overlap")]
    BallOverlap { i: usize, j: usize },

    #[error("ball {i} is not mapped strictly into itself by the deterministic return map")]
    NotInvariant { i: usize },

    #[error("metastable hierarchy is ambiguous: argmin tie while placing orbit {step}")]
    AmbiguousHierarchy { step: usize },

    #[error("block-triangularization fixed point diverged")]
    NoContraction,

    #[error("exponent fit is degenerate: all sigma values coincide")]
    DegenerateFit,

    #[error("iteration did not converge after {iters} steps")]
    NoConvergence { iters: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("linear algebra backend: {0}")]
    Linalg(String),

    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization: {0}")]
    Serialization(String),
}

impl From<ndarray_linalg::error::LinalgError> for Error {
    fn from(e: ndarray_linalg::error::LinalgError) -> Self {
        Error::Linalg(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
