use thiserror::Error;
use wsrm_core::WsrmError;
use wsrm_learn::LearnError;

#[derive(Debug, Error)]
pub enum BenchError {
    /// Bad flags, unreadable inputs, malformed files.
    #[error("config error: {0}")]
    Config(String),
    #[error("method {0} needs a checkpoint")]
    MissingCheckpoint(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl BenchError {
    /// 2 for configuration problems, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Numerical(_) => 3,
            _ => 2,
        }
    }
}

impl From<WsrmError> for BenchError {
    fn from(e: WsrmError) -> Self {
        match e {
            WsrmError::Parse { .. }
            | WsrmError::InvalidInstance(_)
            | WsrmError::Dimension(_)
            | WsrmError::TooLarge(_)
            | WsrmError::ZeroDirectGain { .. }
            | WsrmError::NotNonnegative { .. }
            | WsrmError::ReducibleInterference { .. } => BenchError::Config(e.to_string()),
            _ => BenchError::Numerical(e.to_string()),
        }
    }
}

impl From<LearnError> for BenchError {
    fn from(e: LearnError) -> Self {
        match e {
            LearnError::Core(c) => c.into(),
            e => BenchError::Config(e.to_string()),
        }
    }
}

impl From<csv::Error> for BenchError {
    fn from(e: csv::Error) -> Self {
        BenchError::Io(std::io::Error::other(e.to_string()))
    }
}

pub type Result<T> = std::result::Result<T, BenchError>;
