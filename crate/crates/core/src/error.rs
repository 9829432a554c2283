use thiserror::Error;

/// Errors raised by the numerical routines of this crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("spectrum dimension {0} outside the supported range 2..=12")]
    InvalidDimension(usize),

    #[error("invalid quotient parameters n = {n}, l = {l}: need n >= 2 and 0 <= l < n")]
    InvalidQuotient { n: usize, l: usize },

    #[error("invalid cone band [{mu1}, {mu2}]")]
    InvalidConeBand { mu1: f64, mu2: f64 },

    #[error("eigenvalue {index} = {value:e} is outside the open positive cone")]
    ConeViolation { index: usize, value: f64 },

    #[error("index {index} out of range for dimension {n}")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("matrix is not symmetric (asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("matrix is not admissible: smallest eigenvalue {min_eigenvalue:e}{}", node_suffix(*.node))]
    NotAdmissible {
        min_eigenvalue: f64,
        node: Option<usize>,
    },

    #[error("iteration failed to converge: {0}")]
    NoConvergence(String),

    #[error("mixed Hessian D2_xy c is singular (|det| = {0:e})")]
    SingularJacobian(f64),

    #[error("direction pair is not orthonormal (xi.eta = {0:e})")]
    NotOrthogonal(f64),

    #[error("empty sample set")]
    EmptySampleSet,

    #[error("modified Hessian is singular at boundary node {0}")]
    SingularW(usize),

    #[error("line search stalled after {0} halvings")]
    LineSearchStall(usize),

    #[error("Newton iteration limit {0} reached")]
    MaxIterations(usize),

    #[error("continuation stalled at t = {t} (step {step:e} below floor)")]
    ContinuationStall { t: f64, step: f64 },

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("linear solve failed: {0}")]
    LinearSolve(String),
}

fn node_suffix(node: Option<usize>) -> String {
    match node {
        Some(k) => format!(" at node {k}"),
        None => String::new(),
    }
}

pub type Result<T> = std::result::Result<T, Error>;
