use kplab_core::Error;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("output: {0}")]
    Output(String),
    #[error("{0} acceptance criteria failed")]
    Acceptance(usize),
}

impl CliError {
    /// 2: invalid input, 3: numerical non-convergence, 1: acceptance
    /// failure, 4: filesystem or encoding failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(e) => match e {
                Error::NonConvergence { .. }
                | Error::StatisticalNoise { .. }
                | Error::DynamicRange(_)
                | Error::Singular
                | Error::RangeMismatch { .. } => 3,
                _ => 2,
            },
            CliError::Acceptance(_) => 1,
            CliError::Io(_) | CliError::Output(_) => 4,
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Output(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Output(e.to_string())
    }
}
