use servokit_core::{ControlError, EpipolarError, GeometryError, MatchingError};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("pose sampling exhausted after {0} attempts")]
    SamplingExhausted(usize),
    #[error("no patch has a visible correspondence")]
    NoVisiblePoints,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Epipolar(#[from] EpipolarError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Matching(#[from] MatchingError),
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("unknown suite `{0}`")]
    UnknownSuite(String),
    #[error("io failure: {0}")]
    IoFailure(String),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error(transparent)]
    Sim(#[from] SimError),
}

impl From<std::io::Error> for BenchError {
    fn from(e: std::io::Error) -> Self {
        BenchError::IoFailure(e.to_string())
    }
}

impl From<csv::Error> for BenchError {
    fn from(e: csv::Error) -> Self {
        BenchError::IoFailure(e.to_string())
    }
}

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("io failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),
    #[error("payload length {actual} does not match header ({expected})")]
    Truncated { expected: usize, actual: usize },
    #[error("invalid content: {0}")]
    Invalid(String),
}
