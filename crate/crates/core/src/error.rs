use thiserror::Error;

/// Errors raised by the library. Every variant carries enough context
/// (node, radius, sigma) to locate the offending input.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("non-finite value {value} at node {node:?} (x = {point:?})")]
    NonFinite {
        node: Vec<usize>,
        point: Vec<f64>,
        value: f64,
    },

    #[error("kernel is singular at the origin")]
    SingularKernel,

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("node {node:?} is too close to the box boundary: margin {margin} < required {required}")]
    BoundaryMargin {
        node: Vec<usize>,
        margin: f64,
        required: f64,
    },

    #[error("grid too coarse: {0}")]
    GridTooCoarse(String),

    #[error("solver diverged after {iterations} iterations (residual {residual:e})")]
    Diverged { iterations: usize, residual: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("no barrier parameter passed verification; worst violation {worst:e} (delta = {delta}, sigma = {sigma})")]
    BarrierSearchFailed { worst: f64, delta: f64, sigma: f64 },

    #[error("kernel is not in L1: {0}")]
    NotIntegrable(String),

    #[error("estimator rejected input: {0}")]
    Estimator(String),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
