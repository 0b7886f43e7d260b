//! Client for a remote text-embedding service: POST `{"texts": [...]}`,
//! expect `{"vectors": [[...], ...]}` in the same order.

use std::sync::OnceLock;
use std::time::Duration;

use flowquery_core::matcher::{EmbeddingSource, TextEmbedder, TextEmbedding};
use flowquery_core::FlowError;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{BridgeError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingServiceConfig {
    pub endpoint: Option<String>,
    /// Width the service returns; responses of another width are rejected.
    pub dim: usize,
    pub timeout_secs: u64,
}

impl Default for EmbeddingServiceConfig {
    fn default() -> Self {
        Self { endpoint: None, dim: 384, timeout_secs: 30 }
    }
}

#[derive(Debug)]
pub struct ServiceEmbedder {
    endpoint: String,
    dim: usize,
    timeout: Duration,
    http: OnceLock<reqwest::blocking::Client>,
}

#[derive(Deserialize)]
struct EmbedResponse {
    #[serde(alias = "embeddings")]
    vectors: Vec<Vec<f64>>,
}

impl ServiceEmbedder {
    pub fn new(cfg: &EmbeddingServiceConfig) -> Result<Self> {
        let endpoint = cfg.endpoint.clone().ok_or_else(|| {
            BridgeError::ServiceUnavailable(
                "no embedding endpoint configured; set embedding.endpoint or FLOWQUERY_EMBED_ENDPOINT, \
                 or select the hashed fallback explicitly"
                    .into(),
            )
        })?;
        if cfg.dim == 0 {
            return Err(BridgeError::BadInput("embedding width must be positive".into()));
        }
        let timeout = Duration::from_secs(cfg.timeout_secs.max(1));
        Ok(Self { endpoint, dim: cfg.dim, timeout, http: OnceLock::new() })
    }

    /// Built on first use, from whichever thread embeds first.
    fn http(&self) -> Result<&reqwest::blocking::Client> {
        if self.http.get().is_none() {
            let client = reqwest::blocking::Client::builder()
                .timeout(self.timeout)
                .build()
                .map_err(|e| BridgeError::ServiceUnavailable(format!("http client: {e}")))?;
            let _ = self.http.set(client);
        }
        Ok(self.http.get().expect("initialized above"))
    }

    fn request(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        tracing::debug!(endpoint = %self.endpoint, count = texts.len(), "embedding request");
        let resp = self
            .http()?
            .post(&self.endpoint)
            .json(&json!({ "texts": texts }))
            .send()
            .map_err(|e| BridgeError::from_http(&self.endpoint, e))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(BridgeError::ServiceUnavailable(format!("{} returned {status}", self.endpoint)));
        }
        let body: EmbedResponse = resp.json().map_err(|e| BridgeError::BadResponse(e.to_string()))?;
        if body.vectors.len() != texts.len() {
            return Err(BridgeError::BadResponse(format!(
                "asked for {} vectors, got {}",
                texts.len(),
                body.vectors.len()
            )));
        }
        body.vectors
            .into_iter()
            .map(|mut v| {
                if v.len() != self.dim {
                    return Err(BridgeError::BadResponse(format!("vector width {} != {}", v.len(), self.dim)));
                }
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if !(n.is_finite() && n > 0.0) {
                    return Err(BridgeError::BadResponse("zero or non-finite embedding".into()));
                }
                v.iter_mut().for_each(|x| *x /= n);
                Ok(v)
            })
            .collect()
    }
}

impl TextEmbedder for ServiceEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    /// Every failure surfaces as `ServiceUnavailable`; there is no silent
    /// fallback to the hashed embedder.
    fn embed_batch(&self, texts: &[String]) -> flowquery_core::Result<Vec<TextEmbedding>> {
        if texts.iter().any(|t| t.trim().is_empty()) {
            return Err(FlowError::EmptyQuery);
        }
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let vectors = self.request(texts).map_err(|e| FlowError::ServiceUnavailable(e.to_string()))?;
        Ok(vectors.into_iter().map(|vector| TextEmbedding { vector, source: EmbeddingSource::ExternalService }).collect())
    }
}
