use thiserror::Error;

/// Errors produced anywhere in the learner, oracle or plant code.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("{what} is not symmetric (max asymmetry {asymmetry:e} > {tol:e})")]
    Asymmetric {
        what: &'static str,
        asymmetry: f64,
        tol: f64,
    },

    #[error("{what} fails definiteness requirement (min eigenvalue {min_eigenvalue:e})")]
    NotDefinite {
        what: &'static str,
        min_eigenvalue: f64,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("state diverged at step {step} (|x|_inf = {norm:e})")]
    Divergence { step: usize, norm: f64 },

    #[error("saddle point ill-posed: {reason}")]
    SaddleIllPosed { reason: String },

    #[error("gamma = {gamma} too small: gamma^2 I - L'PL has eigenvalue {min_eigenvalue:e}")]
    GammaTooSmall { gamma: f64, min_eigenvalue: f64 },

    #[error("singular block in Riccati step (condition number {condition:e})")]
    SingularBlock { condition: f64 },

    #[error("no convergence after {iterations} iterations (last change {last_delta:e})")]
    MaxIterExceeded { iterations: usize, last_delta: f64 },

    #[error("regression matrix rank deficient (sigma_min/sigma_max = {ratio:e}); add probing noise")]
    RankDeficient { ratio: f64 },

    #[error("inverse Gram matrix lost positive definiteness (denominator {denominator:e})")]
    GramCorrupted { denominator: f64 },

    #[error("action is off-policy: |v - Kv x|_inf = {deviation:e}")]
    OffPolicyAction { deviation: f64 },

    #[error("rebalancing problem infeasible: {0}")]
    Infeasible(String),

    #[error("active-set solver stalled after {0} iterations")]
    SolverStalled(usize),

    #[error("csv: {0}")]
    Csv(String),
}

impl Error {
    /// True for failures that stem from numerical solvability of the problem
    /// (as opposed to bad input or I/O).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Divergence { .. }
                | Error::SaddleIllPosed { .. }
                | Error::GammaTooSmall { .. }
                | Error::SingularBlock { .. }
                | Error::MaxIterExceeded { .. }
                | Error::RankDeficient { .. }
                | Error::GramCorrupted { .. }
                | Error::NotDefinite { .. }
                | Error::Infeasible(_)
                | Error::SolverStalled(_)
        )
    }

    pub(crate) fn dims(context: &'static str, expected: impl ToString, actual: impl ToString) -> Self {
        Error::DimensionMismatch {
            context,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Csv(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
