use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error("dataset error: {0}")]
    Data(String),
    #[error(transparent)]
    Core(#[from] flowquery_core::FlowError),
    #[error(transparent)]
    Bridge(#[from] flowquery_bridge::BridgeError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = ServerError> = std::result::Result<T, E>;
