use thiserror::Error;

/// Errors raised by the numerical routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Validation(String),

    #[error("symmetric eigensolver did not converge within {iterations} iterations")]
    NoConvergence { iterations: usize },

    #[error("matrix is not positive semidefinite: eigenvalue {value:e} below -{tolerance:e}")]
    NotPsd { value: f64, tolerance: f64 },

    #[error("degenerate signal: X * beta is identically zero")]
    DegenerateSignal,

    #[error(
        "step size {epsilon:e} too large for the loss-decay constants (u = {u:e}); \
         largest feasible step is {epsilon_max:e}"
    )]
    StepTooLarge { epsilon: f64, u: f64, epsilon_max: f64 },

    #[error("covariance recursion lost positive semidefiniteness at iteration {k} (eigenvalue {value:e}); step size too large for stability")]
    CovarianceNotPsd { k: usize, value: f64 },

    #[error("{0}")]
    Undefined(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerics (as opposed to bad inputs or IO).
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NoConvergence { .. }
                | Error::NotPsd { .. }
                | Error::StepTooLarge { .. }
                | Error::CovarianceNotPsd { .. }
                | Error::DegenerateSignal
                | Error::Undefined(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}
