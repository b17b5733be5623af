use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid block structure: {0}")]
    InvalidBlocks(String),

    #[error("invalid potential: {0}")]
    InvalidPotential(String),

    #[error("block index {index} out of range for {count} blocks")]
    BlockIndex { index: usize, count: usize },

    #[error("block {0} has size > 1; the grid engine requires one-dimensional blocks")]
    MultivariateBlock(usize),

    #[error("missing moment E[x_{coord}^{order}]")]
    MissingMoment { coord: usize, order: u32 },

    #[error("matrix is not symmetric: |M[{row}][{col}] - M[{col}][{row}]| = {diff:e}")]
    NotSymmetric { row: usize, col: usize, diff: f64 },

    #[error("matrix is not positive definite{0}")]
    NotPositiveDefinite(String),

    #[error("significantly negative eigenvalue {0:e}")]
    NegativeEigenvalue(f64),

    #[error("eigen solver did not converge in {sweeps} sweeps (off-diagonal norm {off_norm:e})")]
    EigenNoConvergence { sweeps: usize, off_norm: f64 },

    #[error("smoothness constant L_{index} = {value} is not positive")]
    NonPositiveSmoothness { index: usize, value: f64 },

    #[error("monomials present but no declared extra smoothness")]
    MissingDeclaredSmoothness,

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("non-finite value at grid node {0}")]
    NonFinite(usize),

    #[error("boundary mass {mass:e} exceeds guard {guard:e}; enlarge the grid domain")]
    BoundaryMass { mass: f64, guard: f64 },

    #[error("degenerate cumulative distribution: {0}")]
    DegenerateCdf(String),

    #[error("mass escaped the grid domain: {0:e}")]
    MassEscaped(f64),

    #[error("no convergence within {sweeps} sweeps (last movement {movement:e})")]
    NoConvergence { sweeps: usize, movement: f64 },

    #[error("update budget of {0} exceeded")]
    BudgetExceeded(u64),

    #[error("lambda* is not certified: {0}")]
    NotCertified(String),

    #[error("gap underflow at update {0}; reduce the number of updates")]
    GapUnderflow(usize),

    #[error("envelope mode mismatch: {0}")]
    ModeMismatch(String),

    #[error("{0}")]
    Other(String),
}
