use thiserror::Error;

use crate::solver::SolveReport;

/// Errors raised by the dead-core laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("exponent out of range: {0}")]
    ExponentRange(String),

    #[error("ellipticity constants invalid: lambda = {lambda}, Lambda = {upper}")]
    Ellipticity { lambda: f64, upper: f64 },

    #[error("matrix is not symmetric (deviation {deviation:.3e} exceeds {tolerance:.1e})")]
    NotSymmetric { deviation: f64, tolerance: f64 },

    #[error("unsupported matrix size {0}; only 1x1 to 3x3 are handled")]
    MatrixSize(usize),

    #[error("operator weight matrix outside [lambda I, Lambda I]: eigenvalues {eigenvalues:?}")]
    WeightOutOfRange { eigenvalues: Vec<f64> },

    #[error("singular evaluation: p = {p} < 0 with zero gradient and no regularization")]
    SingularEvaluation { p: f64 },

    #[error("expression parse error at offset {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("invalid problem data: {0}")]
    InvalidSpec(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("node {node} lies in the boundary layer; the stencil needs one layer of neighbours")]
    BoundaryNode { node: usize },

    #[error("ball with center {center:?} and radius {radius} contains no grid node")]
    EmptyBall { center: Vec<f64>, radius: f64 },

    #[error("ball with center {center:?} and radius {radius} leaves the domain")]
    BallOutsideDomain { center: Vec<f64>, radius: f64 },

    #[error("invalid scaling map: tau = {tau}, rho = {rho}")]
    InvalidScaling { tau: f64, rho: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("no admissible value found: {0}")]
    NotAdmissible(String),

    #[error("solver did not converge: residual {residual:.3e} after {sweeps} sweeps")]
    NotConverged {
        residual: f64,
        sweeps: usize,
        report: Box<SolveReport>,
    },

    #[error("solver instability: non-finite value at node {node} (sweep {sweep})")]
    Unstable { node: usize, sweep: usize },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed input: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;
