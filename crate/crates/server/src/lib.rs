//! HTTP query service and command-line front end for the flow query engine.

pub mod api;
pub mod cli;
pub mod config;
pub mod error;
pub mod state;

pub use api::router;
pub use config::{EmbeddingConfig, EmbeddingMode, ServerConfig};
pub use error::{Result, ServerError};
pub use state::{AppState, Dataset, Session};

use std::sync::Arc;

/// Binds, serves until Ctrl-C or SIGTERM, then drains open connections.
pub async fn serve(cfg: ServerConfig, state: Arc<AppState>) -> Result<()> {
    let addr = format!("{}:{}", cfg.host, cfg.port);
    let listener = tokio::net::TcpListener::bind(&addr)
        .await
        .map_err(|source| ServerError::Bind { addr: addr.clone(), source })?;
    tracing::info!(addr = %listener.local_addr()?, fingerprint = ?state.data.fingerprint(), "listening");
    axum::serve(listener, router(state, cfg.max_body_bytes)).with_graceful_shutdown(shutdown_signal()).await?;
    tracing::info!("shut down");
    Ok(())
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
}
