use thiserror::Error;

#[derive(Debug, Error)]
pub enum BridgeError {
    #[error("service unavailable: {0}")]
    ServiceUnavailable(String),
    #[error("request timed out: {0}")]
    Timeout(String),
    #[error("malformed service response: {0}")]
    BadResponse(String),
    #[error("invalid input: {0}")]
    BadInput(String),
    #[error("image encoding failed: {0}")]
    Image(String),
    #[error(transparent)]
    Core(#[from] flowquery_core::FlowError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = BridgeError> = std::result::Result<T, E>;

impl BridgeError {
    pub(crate) fn from_http(endpoint: &str, e: reqwest::Error) -> Self {
        if e.is_timeout() {
            BridgeError::Timeout(format!("{endpoint}: {e}"))
        } else if e.is_decode() {
            BridgeError::BadResponse(format!("{endpoint}: {e}"))
        } else {
            BridgeError::ServiceUnavailable(format!("{endpoint}: {e}"))
        }
    }
}
