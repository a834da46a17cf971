use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Failures sorted by the exit code they map to.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad configuration, data or arguments; exit code 2.
    #[error("{0}")]
    Config(String),
    /// Sampling or fitting broke down; exit code 3.
    #[error("{0}")]
    Numerical(String),
    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Numerical(_) => 3,
            CliError::Config(_) | CliError::Io { .. } => 2,
        }
    }

    pub fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> CliError {
        let context = context.into();
        move |source| CliError::Io { context, source }
    }

    /// Error raised while building the model from inputs.
    pub fn setup(e: auxmix::Error) -> Self {
        match e {
            auxmix::Error::Numerical(_) | auxmix::Error::Fit(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }

    /// Error raised while sampling.
    pub fn run(e: auxmix::Error) -> Self {
        match e {
            auxmix::Error::Config(_) | auxmix::Error::Usage(_) => CliError::Config(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

pub fn config_error(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}
