use hinfq::qlearn::LearnFailure;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] hinfq::Error),
    #[error("learning failed: {0}")]
    Learn(Box<LearnFailure>),
    #[error("{error}; a feasible gamma is {suggestion}")]
    GammaTooSmall { error: hinfq::Error, suggestion: String },
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(String),
}

impl CliError {
    /// Exit status: 2 for numerical-solvability failures, 1 for the rest.
    pub fn exit_code(&self) -> i32 {
        let numerical = match self {
            CliError::Core(e) => e.is_numerical(),
            CliError::Learn(f) => f.error.is_numerical(),
            CliError::GammaTooSmall { .. } => true,
            CliError::Config(_) | CliError::Io(_) => false,
        };
        if numerical {
            2
        } else {
            1
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<LearnFailure> for CliError {
    fn from(f: LearnFailure) -> Self {
        CliError::Learn(Box::new(f))
    }
}

pub type CliResult<T> = Result<T, CliError>;
