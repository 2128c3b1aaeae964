use thiserror::Error;

/// Failures raised by the estimation pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Shapes or grids of the inputs do not line up.
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    /// An input lies outside the domain the operation is defined on.
    #[error("domain error: {0}")]
    Domain(String),
    /// An input violates a structural requirement (non-finite value, asymmetry, ...).
    #[error("validation error: {0}")]
    Validation(String),
    /// The requested truncation or penalty leaves the problem without a unique solution.
    #[error("ill-conditioned: {0}")]
    IllConditioned(String),
    /// A property that should hold by construction was found broken.
    #[error("internal invariant violated: {0}")]
    Invariant(String),
}

impl Error {
    pub fn is_ill_conditioned(&self) -> bool {
        matches!(self, Error::IllConditioned(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
