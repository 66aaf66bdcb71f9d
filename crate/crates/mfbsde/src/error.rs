use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("solver failure: {message}")]
    Solver { message: String, history: Vec<f64> },
    #[error("i/o failure: {0}")]
    Io(String),
    #[error("{failed} of {total} acceptance criteria failed")]
    Suite { failed: usize, total: usize },
}

impl HarnessError {
    /// Process exit status: 2 configuration, 3 solver or suite, 4 i/o.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Solver { .. } | Self::Suite { .. } => 3,
            Self::Io(_) => 4,
        }
    }
}

impl From<mfbsde_core::Error> for HarnessError {
    fn from(e: mfbsde_core::Error) -> Self {
        match e {
            mfbsde_core::Error::InvalidArgument(m) => Self::Config(m),
            mfbsde_core::Error::ConvergenceFailure { context, history } => Self::Solver { message: context, history },
            other => Self::Solver {
                message: other.to_string(),
                history: Vec::new(),
            },
        }
    }
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}

impl From<csv::Error> for HarnessError {
    fn from(e: csv::Error) -> Self {
        Self::Io(e.to_string())
    }
}
