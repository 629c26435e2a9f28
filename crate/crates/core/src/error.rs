use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid exit profile: {0}")]
    InvalidProfile(String),
    #[error("invalid layer: {0}")]
    InvalidLayer(String),
    #[error("invalid network descriptor: {0}")]
    InvalidDescriptor(String),
    #[error("invalid batching policy: B_R={b_r} must lie in [1, {b_act}]")]
    InvalidPolicy { b_r: usize, b_act: usize },
    #[error("unsupported PE stacking: {0}")]
    UnsupportedStacking(String),
    #[error("invalid design: {0}")]
    InvalidDesign(String),
    #[error("lookup out of range: {0}")]
    Lookup(String),
    #[error("exit range error: {0}")]
    Range(String),
    #[error("no feasible design point in the candidate grid")]
    NoFeasibleDesign,
    #[error("configuration error: {0}")]
    Config(String),
    #[error("empty event log")]
    EmptyLog,
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
