use thiserror::Error;

/// Errors produced by model construction, assembly, and dynamics.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("singular geometry: {0}")]
    SingularGeometry(String),

    #[error("stiffness: {0}; consider the linear-solve path")]
    Stiffness(String),

    #[error("dissipator is not completely positive: {0}")]
    NonCompletelyPositive(String),

    #[error("unbounded yield integral: {0}")]
    UnboundedIntegral(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
