use thiserror::Error;

/// Errors raised by the simulation routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    /// A documented precondition or structural invariant was not met.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Non-finite input or a numerically meaningless request.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("convergence error: {0}")]
    Convergence(String),

    /// The time grid is too coarse for the jump rates encountered.
    #[error("step-size error: {0}")]
    StepSize(String),

    /// The simulated window is inconsistent with the model (revivals, undecayed kernels).
    #[error("window error: {0}")]
    Window(String),

    #[error("underflow: {0}")]
    Underflow(String),

    /// Photon-number truncation too aggressive.
    #[error("truncation error: {0}")]
    Truncation(String),

    #[error("statistics error: {0}")]
    Statistics(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
