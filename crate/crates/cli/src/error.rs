use thiserror::Error;

/// Failure of a command-line run, mapped onto the process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Unreadable, malformed or invalid configuration.
    #[error("{0}")]
    Config(String),

    #[error("infeasible problem: {0}")]
    Infeasible(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Writing outputs failed.
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Infeasible(_) => 3,
            CliError::Numerical(_) => 4,
            CliError::Io(_) => 1,
        }
    }
}

impl From<microgrid_risk::Error> for CliError {
    fn from(err: microgrid_risk::Error) -> Self {
        use microgrid_risk::Error;
        match err {
            Error::InvalidArgument(msg) => CliError::Config(msg),
            e @ Error::InfeasibleDemand { .. } => CliError::Infeasible(e.to_string()),
            Error::NumericalFailure(msg) => CliError::Numerical(msg),
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
