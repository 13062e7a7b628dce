use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("trajectory escaped the divergence guard at step {step}")]
    TrajectoryEscaped { step: usize },

    #[error("evaluation error in `{subexpr}`: {reason}")]
    Evaluation { subexpr: String, reason: String },

    #[error("parse error at byte {position}: {message}")]
    Parse { position: usize, message: String },

    #[error("numeric overflow in stack {stack}, layer {layer}")]
    NumericOverflow { stack: usize, layer: usize },

    #[error("every training instance failed")]
    AllInstancesFailed,

    #[error("every simplification candidate was disqualified")]
    AllCandidatesDisqualified,

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Checkpoint(e.to_string())
    }
}
