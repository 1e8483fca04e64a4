use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected d={expected}, got d={got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("empty support")]
    EmptySupport,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("missing field component: {0}")]
    MissingComponent(&'static str),

    #[error("support leaves the domain: {0}")]
    DomainMargin(String),

    #[error("covering misses {missed} above-threshold cells")]
    CoveringIncomplete { missed: usize },

    #[error("time step violates stability: {0}")]
    Stability(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("internal consistency check failed: {0}")]
    Consistency(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures caused by the numbers themselves rather than by the
    /// caller's input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonFinite(_) | Error::Consistency(_))
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::invalid(msg)
}
