use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum Error {
    #[error("invalid basis: {0}")]
    InvalidBasis(String),

    #[error("frequency {freq} outside [-{max}, {max}]")]
    FrequencyOutOfRange { freq: i64, max: i64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid rank: {0}")]
    InvalidRank(usize),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("normal equations numerically singular in dimension {dim}")]
    Conditioning { dim: usize },

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
