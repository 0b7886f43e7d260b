//! Service configuration: a TOML file with environment overrides.

use std::path::{Path, PathBuf};

use flowquery_bridge::{ChatConfig, EmbeddingServiceConfig, TagMode};
use serde::{Deserialize, Serialize};

use crate::error::{Result, ServerError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingMode {
    /// Offline hashed trigram embedder, sized to the index.
    Hashed,
    /// Remote embedding service.
    Service,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingConfig {
    pub mode: EmbeddingMode,
    #[serde(flatten)]
    pub service: EmbeddingServiceConfig,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self { mode: EmbeddingMode::Hashed, service: EmbeddingServiceConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServerConfig {
    pub host: String,
    pub port: u16,
    /// Holds `field.meta`/`field.vec`, `streamlines.txt`, `segments.txt` and
    /// `index.fqix`; each is optional.
    pub data_dir: PathBuf,
    /// Requests with larger bodies get 413.
    pub max_body_bytes: usize,
    pub tag_mode: TagMode,
    pub embedding: EmbeddingConfig,
    pub chat: ChatConfig,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: 8080,
            data_dir: PathBuf::from("data"),
            max_body_bytes: 64 * 1024,
            tag_mode: TagMode::Lexicon,
            embedding: EmbeddingConfig::default(),
            chat: ChatConfig::default(),
        }
    }
}

impl ServerConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| ServerError::Config(e.to_string()))
    }

    /// Reads `path` when given, then applies `FLOWQUERY_*` variables.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| ServerError::Config(format!("{}: {e}", p.display())))?;
                Self::from_toml(&text)?
            }
            None => Self::default(),
        };
        cfg.apply_env(|k| std::env::var(k).ok())?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Overrides from `FLOWQUERY_HOST`, `_PORT`, `_DATA_DIR`, `_MAX_BODY`,
    /// `_TAG_MODE`, `_CHAT_ENDPOINT`, `_CHAT_MODEL` and `_EMBED_ENDPOINT`
    /// (which also selects the service embedder).
    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) -> Result<()> {
        let parse_err = |k: &str, v: &str| ServerError::Config(format!("{k}={v} is not valid"));
        if let Some(v) = get("FLOWQUERY_HOST") {
            self.host = v;
        }
        if let Some(v) = get("FLOWQUERY_PORT") {
            self.port = v.parse().map_err(|_| parse_err("FLOWQUERY_PORT", &v))?;
        }
        if let Some(v) = get("FLOWQUERY_DATA_DIR") {
            self.data_dir = PathBuf::from(v);
        }
        if let Some(v) = get("FLOWQUERY_MAX_BODY") {
            self.max_body_bytes = v.parse().map_err(|_| parse_err("FLOWQUERY_MAX_BODY", &v))?;
        }
        if let Some(v) = get("FLOWQUERY_TAG_MODE") {
            self.tag_mode = v.parse().map_err(|_| parse_err("FLOWQUERY_TAG_MODE", &v))?;
        }
        if let Some(v) = get("FLOWQUERY_CHAT_ENDPOINT") {
            self.chat.endpoint = Some(v);
        }
        if let Some(v) = get("FLOWQUERY_CHAT_MODEL") {
            self.chat.model = v;
        }
        if let Some(v) = get("FLOWQUERY_EMBED_ENDPOINT") {
            self.embedding.service.endpoint = Some(v);
            self.embedding.mode = EmbeddingMode::Service;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_body_bytes == 0 {
            return Err(ServerError::Config("max_body_bytes must be positive".into()));
        }
        if self.embedding.mode == EmbeddingMode::Service && self.embedding.service.endpoint.is_none() {
            return Err(ServerError::Config("embedding mode `service` needs embedding.endpoint".into()));
        }
        Ok(())
    }
}
