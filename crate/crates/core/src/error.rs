use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("point {0:?} lies outside the field domain")]
    OutOfDomain([f64; 3]),
    #[error("bad parameter: {0}")]
    BadParam(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error("segment has zero arc length")]
    DegenerateSegment,
    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },
    #[error("query text is empty")]
    EmptyQuery,
    #[error("match index is empty")]
    EmptyIndex,
    #[error("service unavailable: {0}")]
    ServiceUnavailable(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = FlowError> = std::result::Result<T, E>;

pub(crate) fn bad_param(msg: impl Into<String>) -> FlowError {
    FlowError::BadParam(msg.into())
}
