use thiserror::Error;

/// Failure categories, each mapped to a fixed process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("parse error: {0}")]
    Parse(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("numeric abort: {0}")]
    Numeric(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse(_) | CliError::Config(_) | CliError::Io(_) => exit::PARSE,
            CliError::Validation(_) => exit::VALIDATION,
            CliError::Numeric(_) => exit::NUMERIC,
        }
    }
}

impl From<csalign::Error> for CliError {
    fn from(e: csalign::Error) -> Self {
        match e {
            csalign::Error::InvalidConfig(msg) => CliError::Config(msg),
            csalign::Error::NonFiniteLoss { .. } => CliError::Numeric(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

pub mod exit {
    pub const OK: i32 = 0;
    pub const PROPERTY_FAILURE: i32 = 1;
    pub const PARSE: i32 = 2;
    pub const VALIDATION: i32 = 3;
    pub const NUMERIC: i32 = 4;
}

pub type CliResult<T> = Result<T, CliError>;
