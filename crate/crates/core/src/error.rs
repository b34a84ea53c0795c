use thiserror::Error;

/// Errors raised by the problem model and solvers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum WsrmError {
    #[error("direct gain G[{link}][{link}] = {value} is not positive")]
    ZeroDirectGain { link: usize, value: f64 },
    #[error("interference matrix is reducible: link {from} cannot reach link {to}")]
    ReducibleInterference { from: usize, to: usize },
    #[error("invalid instance: {0}")]
    InvalidInstance(String),
    #[error("matrix has a negative or non-finite entry at ({row}, {col})")]
    NotNonnegative { row: usize, col: usize },
    #[error("SINR target infeasible: spectral radius {radius} of diag(gamma) F is not below one")]
    InfeasibleGamma { radius: f64 },
    #[error("fixed-point iteration did not converge after {iterations} iterations (best residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("certificate check failed: {0}")]
    Certificate(String),
    #[error("grid search supports at most 4 links, got {0}")]
    TooLarge(usize),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("direct gain of link {link} is degenerate ({value:e})")]
    DegenerateDirectGain { link: usize, value: f64 },
    #[error("regularizer of link {0} is not positive definite")]
    SingularRegularizer(usize),
    #[error("stacked channel is rank deficient")]
    RankDeficient,
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}

pub type Result<T> = std::result::Result<T, WsrmError>;
