use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Lib(#[from] mqrif::Error),

    #[error("cannot read config: {0}")]
    Config(#[from] toml::de::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// 1 for usage problems, 2 for data problems, 3 when an estimate did not
    /// converge.
    pub fn exit_code(&self) -> i32 {
        use mqrif::Error as E;
        match self {
            CliError::Usage(_) | CliError::Config(_) => 1,
            CliError::Lib(E::InvalidParameter(_)) => 1,
            CliError::Lib(E::NonConvergence(_) | E::ReplicateFailures { .. }) => 3,
            CliError::Lib(_) | CliError::Io(_) | CliError::Json(_) => 2,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
