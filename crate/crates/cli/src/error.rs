use ldct_core::Error as CoreError;
use thiserror::Error;

/// Failures of a command, each mapped to a process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad configuration, arguments or inputs: exit code 2.
    #[error("{0}")]
    Config(String),

    /// The solver or a numeric routine failed: exit code 3.
    #[error("{0}")]
    Numeric(String),

    /// A property suite reported a failure: exit code 4.
    #[error("property suite failed: {0}")]
    SuiteFailed(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::SuiteFailed(_) => 4,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::LineSearchFailure { .. } | CoreError::NonFiniteIterate(_) | CoreError::DegenerateBandwidth => {
                CliError::Numeric(e.to_string())
            }
            _ => CliError::Config(e.to_string()),
        }
    }
}
