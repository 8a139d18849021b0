use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("exact transport solver did not reach optimality within {iterations} pivots")]
    SolverFailure { iterations: usize },

    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    ConvergenceFailure {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("{count} deterministic policies exceed the enumeration limit of {limit}; brute force is infeasible for this model")]
    TooLarge { count: u128, limit: u128 },

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
