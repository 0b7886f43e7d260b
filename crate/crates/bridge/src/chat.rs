//! Relay of role-tagged conversations to a chat-completions style endpoint.

use std::sync::OnceLock;
use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{BridgeError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatTurn {
    pub role: Role,
    pub text: String,
    #[serde(default)]
    pub attached_tags: Vec<String>,
}

impl ChatTurn {
    pub fn new(role: Role, text: impl Into<String>) -> Self {
        Self { role, text: text.into(), attached_tags: Vec::new() }
    }

    pub fn system(text: impl Into<String>) -> Self {
        Self::new(Role::System, text)
    }

    pub fn user(text: impl Into<String>) -> Self {
        Self::new(Role::User, text)
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Self::new(Role::Assistant, text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.role != Role::System && self.text.trim().is_empty() {
            return Err(BridgeError::BadInput(format!("{} turn has empty text", self.role.as_str())));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChatConfig {
    /// Full URL of the completions endpoint. Unset disables chat.
    pub endpoint: Option<String>,
    pub model: String,
    /// Environment variable holding the bearer token, if any.
    pub api_key_env: String,
    pub timeout_secs: u64,
    /// Character budget for the relayed history.
    pub context_budget: usize,
}

impl Default for ChatConfig {
    fn default() -> Self {
        Self {
            endpoint: None,
            model: "gpt-4o".into(),
            api_key_env: "FLOWQUERY_API_KEY".into(),
            timeout_secs: 60,
            context_budget: 24_000,
        }
    }
}

/// Drops the oldest non-system turns until the total text length fits
/// `budget` characters. System turns and the newest turn are always kept.
pub fn trim_history(history: &[ChatTurn], budget: usize) -> Vec<ChatTurn> {
    let size = |t: &ChatTurn| t.text.chars().count();
    let mut total: usize = history.iter().map(size).sum();
    let mut keep = vec![true; history.len()];
    let last = history.len().saturating_sub(1);
    for (i, t) in history.iter().enumerate() {
        if total <= budget {
            break;
        }
        if t.role != Role::System && i != last {
            keep[i] = false;
            total -= size(t);
        }
    }
    history.iter().zip(keep).filter(|(_, k)| *k).map(|(t, _)| t.clone()).collect()
}

/// Blocking client; call it from a thread where blocking is allowed (for
/// example inside `spawn_blocking` when running under an async runtime).
pub struct ChatClient {
    cfg: ChatConfig,
    http: OnceLock<reqwest::blocking::Client>,
}

impl ChatClient {
    /// The HTTP client is built on first use.
    pub fn new(cfg: ChatConfig) -> Result<Self> {
        if cfg.endpoint.as_deref().is_some_and(|e| e.trim().is_empty()) {
            return Err(BridgeError::BadInput("chat endpoint is blank".into()));
        }
        Ok(Self { cfg, http: OnceLock::new() })
    }

    pub fn config(&self) -> &ChatConfig {
        &self.cfg
    }

    pub fn is_configured(&self) -> bool {
        self.cfg.endpoint.is_some()
    }

    fn endpoint(&self) -> Result<(&str, &reqwest::blocking::Client)> {
        let Some(endpoint) = &self.cfg.endpoint else {
            return Err(BridgeError::ServiceUnavailable(
                "no chat endpoint configured; set chat.endpoint in the config file or FLOWQUERY_CHAT_ENDPOINT".into(),
            ));
        };
        if self.http.get().is_none() {
            let client = reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(self.cfg.timeout_secs.max(1)))
                .build()
                .map_err(|e| BridgeError::ServiceUnavailable(format!("http client: {e}")))?;
            let _ = self.http.set(client);
        }
        Ok((endpoint.as_str(), self.http.get().expect("initialized above")))
    }

    /// Sends raw message objects and returns the first choice's text.
    pub fn complete(&self, messages: Vec<Value>) -> Result<String> {
        let (endpoint, http) = self.endpoint()?;
        let body = json!({ "model": self.cfg.model, "messages": messages });
        let mut req = http.post(endpoint).json(&body);
        if let Ok(key) = std::env::var(&self.cfg.api_key_env) {
            if !key.is_empty() {
                req = req.bearer_auth(key);
            }
        }
        tracing::info!(endpoint, messages = body["messages"].as_array().map_or(0, Vec::len), "chat request");
        let resp = req.send().map_err(|e| BridgeError::from_http(endpoint, e))?;
        let status = resp.status();
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            return Err(BridgeError::ServiceUnavailable(format!("{endpoint} returned {status}: {text}")));
        }
        let v: Value = resp.json().map_err(|e| BridgeError::BadResponse(e.to_string()))?;
        let reply = v["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| BridgeError::BadResponse("missing choices[0].message.content".into()))?;
        tracing::info!(endpoint, chars = reply.len(), "chat response");
        Ok(reply.to_string())
    }

    /// Relays `history` (trimmed to the context budget) and returns the
    /// assistant's reply as a new turn. `history` is not modified.
    pub fn chat(&self, history: &[ChatTurn]) -> Result<ChatTurn> {
        if history.is_empty() {
            return Err(BridgeError::BadInput("chat history is empty".into()));
        }
        for t in history {
            t.validate()?;
        }
        let trimmed = trim_history(history, self.cfg.context_budget);
        let messages = trimmed.iter().map(|t| json!({ "role": t.role.as_str(), "content": t.text })).collect();
        Ok(ChatTurn::assistant(self.complete(messages)?))
    }

    /// One user message carrying a text prompt and PNG images.
    pub fn complete_with_images(&self, prompt: &str, pngs: &[Vec<u8>]) -> Result<String> {
        let mut content = vec![json!({ "type": "text", "text": prompt })];
        for png in pngs {
            let b64 = base64::engine::general_purpose::STANDARD.encode(png);
            content.push(json!({ "type": "image_url", "image_url": { "url": format!("data:image/png;base64,{b64}") } }));
        }
        self.complete(vec![json!({ "role": "user", "content": content })])
    }
}
