use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("channel coefficient {index} is zero")]
    ZeroCoefficient { index: usize },

    #[error("channel coefficients are not sorted by nondecreasing magnitude (index {index})")]
    NotCanonical { index: usize },

    #[error("channel matrix is rank deficient")]
    RankDeficient,

    #[error("precoded vector is identically zero; normalization is undefined")]
    ZeroNormalization,

    #[error("{0}")]
    Config(#[from] crate::sim::ConfigError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
