use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// Failure modes shared by every solver in the crate.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A precondition on the inputs does not hold.
    InvalidArgument(String),
    /// A numerical kernel (root bracket, regression, inner iteration) broke down.
    NumericalFailure {
        context: String,
        step: Option<usize>,
    },
    /// A fixed-point iteration did not reach its tolerance.
    ConvergenceFailure {
        context: String,
        /// Successive distances, one per iteration.
        history: Vec<f64>,
    },
    /// The declared model violates a structural hypothesis (root solvability, separation).
    ModelError(String),
}

pub type Result<T> = core::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>, step: Option<usize>) -> Self {
        Error::NumericalFailure {
            context: msg.into(),
            step,
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::NumericalFailure { context, step } => match step {
                Some(i) => write!(f, "numerical failure at step {i}: {context}"),
                None => write!(f, "numerical failure: {context}"),
            },
            Error::ConvergenceFailure { context, history } => write!(
                f,
                "no convergence after {} iterations: {context} (last distance {:e})",
                history.len(),
                history.last().copied().unwrap_or(f64::NAN)
            ),
            Error::ModelError(msg) => write!(f, "model error: {msg}"),
        }
    }
}

impl core::error::Error for Error {}
