use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dataset: {0}")]
    InvalidData(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("starting point infeasible: event {event} of realization `{realization}` (type {kind}) has predicted rate {rate}")]
    InfeasibleStart {
        realization: String,
        event: usize,
        kind: usize,
        rate: f64,
    },
    #[error("objective is infeasible at the requested point")]
    Infeasible,
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
