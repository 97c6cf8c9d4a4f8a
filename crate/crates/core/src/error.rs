use thiserror::Error;

/// Every failure the pipeline can report. Each variant maps onto one of the
/// process exit codes via [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("degenerate statistics: {0}")]
    DegenerateStats(String),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("state error: {0}")]
    State(String),
    #[error("fusion error: {0}")]
    Fusion(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),
    #[error("incompatible checkpoint: {0}")]
    Compatibility(String),
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// 0 success, 2 config/usage, 3 data/protocol, 4 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Parameter(_) => 2,
            Error::Numeric(_) => 4,
            _ => 3,
        }
    }
}

pub(crate) fn dim(msg: impl Into<String>) -> Error {
    Error::Dimension(msg.into())
}
