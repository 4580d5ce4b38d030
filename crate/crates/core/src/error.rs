use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid cell index {0}")]
    InvalidCell(usize),
    #[error("invalid mode {0}")]
    InvalidMode(usize),
    #[error("state escaped truncation: mode {mode}, z = {z:?}")]
    EscapedTruncation { mode: usize, z: Vec<f64> },
    #[error("invalid state space: {0}")]
    InvalidSpace(String),
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("time step {dt} exceeds the stability bound {bound}")]
    Stability { dt: f64, bound: f64 },
    #[error("negative density {value:e} in cell {cell} at t = {time}")]
    NegativeDensity { cell: usize, value: f64, time: f64 },
    #[error("jump rate {rate} exceeds declared bound {bound} in mode {mode}")]
    RateBoundExceeded { mode: usize, rate: f64, bound: f64 },
    #[error("partitions do not match")]
    PartitionMismatch,
    #[error("test function support exceeds the truncation box")]
    SupportExceedsTruncation,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error("{path}: {message}")]
    InvalidParameter { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;
