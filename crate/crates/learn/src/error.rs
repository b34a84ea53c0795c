use thiserror::Error;
use wsrm_core::WsrmError;

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("kernel size {kernel} does not fit {links} links")]
    KernelTooLarge { kernel: usize, links: usize },
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("replay buffer holds {have} transitions, batch needs {need}")]
    BufferUnderflow { have: usize, need: usize },
    #[error("instance {0} has no label")]
    MissingLabel(usize),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Core(#[from] WsrmError),
}

pub type Result<T> = std::result::Result<T, LearnError>;
