use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("rank deficient: {0}")]
    RankDeficient(String),

    #[error("infeasible problem: {0}")]
    Infeasible(String),

    #[error("instance too large: {0}")]
    InstanceTooLarge(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag for the error class.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid-argument",
            Error::ShapeMismatch(_) => "shape-mismatch",
            Error::RankDeficient(_) => "rank-deficient",
            Error::Infeasible(_) => "infeasible-problem",
            Error::InstanceTooLarge(_) => "instance-too-large",
            Error::Numerical(_) => "numerical-failure",
            Error::Parse(_) => "parse-error",
            Error::Io(_) => "io-error",
            Error::Csv(_) => "csv-error",
            Error::Json(_) => "json-error",
        }
    }
}

impl From<toml::de::Error> for Error {
    fn from(e: toml::de::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
