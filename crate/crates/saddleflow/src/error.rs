//! Error type shared by all saddleflow modules.

/// Errors produced by saddleflow computations.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller-supplied argument violated a precondition (dimension
    /// mismatch, non-finite entry, non-positive gain, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A problem callback failed or returned a non-finite value.
    #[error("evaluation failed: {0}")]
    Evaluation(String),

    /// The adaptive integrator could not make progress.
    #[error(
        "step size underflow at t = {t:.6e} (h = {h:.3e}); the flow may be stiff or non-smooth"
    )]
    StepSizeUnderflow { t: f64, h: f64 },

    /// The saddle search exhausted its iteration budget.
    #[error("saddle search failed: {0}")]
    SaddleNotFound(String),

    /// A problem/scenario file could not be parsed or validated.
    #[error("schema error: {0}")]
    Schema(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn eval(msg: impl Into<String>) -> Self {
        Error::Evaluation(msg.into())
    }
}
