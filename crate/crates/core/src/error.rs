use thiserror::Error;

/// Errors raised by the simulation and inference pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {what} (expected {expected}, got {got})")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid parameter: {0}")]
    Domain(String),

    #[error("numerical blow-up at node {node} (t = {time})")]
    BlowUp { node: usize, time: f64 },

    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("power iteration did not converge within {iterations} iterations")]
    IterationLimit { iterations: usize },

    #[error("covariance factorization failed even with diagonal jitter {jitter:e}; try a coarser grid or add jitter")]
    Cholesky { jitter: f64 },

    #[error(
        "kernel linear system is singular at column {column} (condition estimate {condition:e})"
    )]
    SingularKernel { column: usize, condition: f64 },

    #[error("invalid kernel: bracket decreases between nodes {node} and {next}", next = .node + 1)]
    InvalidKernel { node: usize },

    #[error("degenerate path: denominator {denominator:e} is below {threshold:e} (horizon or drift too small)")]
    DegeneratePath { denominator: f64, threshold: f64 },

    #[error("fundamental matrix underflow at node {node}: det = {det:e}; use a shorter horizon or log-scaled propagators")]
    Underflow { node: usize, det: f64 },

    #[error(
        "Riccati solvability violated at node {node}: det Psi1 = {det:e} (parameter too negative)"
    )]
    Solvability { node: usize, det: f64 },

    #[error("study invalid: {degenerate} of {total} replications were degenerate")]
    StudyInvalid { degenerate: usize, total: usize },

    #[error("need at least {required} samples, got {got}")]
    TooFewSamples { required: usize, got: usize },

    #[error("input signal has no time-domain values (u); build it with optimal_u or from_u")]
    MissingControl,

    #[error("malformed file {path}: {reason}")]
    Format { path: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Dimension {
            what,
            expected,
            got,
        });
    }
    Ok(())
}
