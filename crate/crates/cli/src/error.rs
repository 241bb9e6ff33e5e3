use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),

    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Validation(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        CliError::Validation(vec![msg.into()])
    }
}

impl From<ctdg::error::Error> for CliError {
    fn from(e: ctdg::error::Error) -> Self {
        use ctdg::error::Error as E;
        match e {
            // malformed input files are rejected like bad configuration
            E::Parse { .. } | E::Unsorted { .. } | E::UnsupportedOperation { .. } => CliError::Validation(vec![e.to_string()]),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<ctdg_spectral::SpectralError> for CliError {
    fn from(e: ctdg_spectral::SpectralError) -> Self {
        match e {
            ctdg_spectral::SpectralError::Config(_) => CliError::Validation(vec![e.to_string()]),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}
