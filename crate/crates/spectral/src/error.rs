use thiserror::Error;

pub type Result<T> = std::result::Result<T, SpectralError>;

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error("node {0} has no neighbors")]
    IsolatedNode(usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("malformed basis file: {0}")]
    Format(String),

    #[error(transparent)]
    Core(#[from] ctdg::error::Error),
}
