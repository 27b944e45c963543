use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("value {value} outside the working interval [0, {max}]")]
    Domain { value: f64, max: f64 },

    #[error("non-finite evaluation at y = {0}")]
    Evaluation(f64),

    #[error("hypothesis violated: {0}")]
    Hypothesis(String),

    #[error("step failed: {0}")]
    StepFailure(String),

    #[error("inner solver did not converge after {iterations} iterations (gradient {gradient:.3e})")]
    Convergence { iterations: usize, gradient: f64 },

    #[error("time step underflow at t = {t} (dt = {dt:.3e})")]
    DtUnderflow { t: f64, dt: f64 },

    #[error("singular linear system")]
    Singular,
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
