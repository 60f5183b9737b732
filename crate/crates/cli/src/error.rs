use molsyn_core::CoreError;

/// Failure classes mapped to process exit codes.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Runtime(m) => m,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let m = e.to_string();
        match e {
            CoreError::Config(_) => CliError::Usage(m),
            CoreError::MissingFile(_) | CoreError::Data(_) | CoreError::Json(_) | CoreError::Csv(_) => CliError::Data(m),
            _ => CliError::Runtime(m),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
