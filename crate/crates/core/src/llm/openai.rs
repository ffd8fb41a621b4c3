use std::time::Duration;

use serde::{Deserialize, Serialize};
use tracing::debug;

use super::{BackendError, ChatBackend, ChatMessage};

/// Environment variable consulted for the bearer token.
pub const API_KEY_ENV: &str = "OPENAI_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub api_key: Option<String>,
    pub timeout_secs: f64,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            base_url: "http://localhost:1234".into(),
            model: "openai/gpt-oss-20b".into(),
            temperature: 0.3,
            max_tokens: 2048,
            api_key: None,
            timeout_secs: 30.0,
        }
    }
}

impl EndpointConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            return Err(format!("timeout_secs must be positive, got {}", self.timeout_secs));
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(format!("temperature must be nonnegative, got {}", self.temperature));
        }
        if self.base_url.trim().is_empty() {
            return Err("base_url is empty".into());
        }
        Ok(())
    }

    pub fn completions_url(&self) -> String {
        format!("{}/v1/chat/completions", self.base_url.trim_end_matches('/'))
    }
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct CompletionResponse {
    #[serde(default)]
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: Option<ResponseMessage>,
}

#[derive(Deserialize)]
struct ResponseMessage {
    content: Option<String>,
}

/// Blocking client for `POST {base_url}/v1/chat/completions`.
///
/// Exactly one request per call; there are no retries. Must not be created
/// or dropped from inside an async runtime.
pub struct OpenAiClient {
    cfg: EndpointConfig,
    http: reqwest::blocking::Client,
}

impl OpenAiClient {
    pub fn new(mut cfg: EndpointConfig) -> Result<Self, BackendError> {
        cfg.validate().map_err(BackendError::InvalidRequest)?;
        if cfg.api_key.is_none() {
            cfg.api_key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        }
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(cfg.timeout_secs))
            .build()
            .map_err(|e| BackendError::Other(e.to_string()))?;
        Ok(Self { cfg, http })
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.cfg
    }

    pub fn chat_complete(&self, messages: &[ChatMessage]) -> Result<String, BackendError> {
        if messages.len() != 2 {
            return Err(BackendError::InvalidRequest(format!(
                "expected a system/user message pair, got {} messages",
                messages.len()
            )));
        }
        let body = CompletionRequest {
            model: &self.cfg.model,
            messages,
            temperature: self.cfg.temperature,
            max_tokens: self.cfg.max_tokens,
        };
        let mut req = self.http.post(self.cfg.completions_url()).json(&body);
        if let Some(key) = &self.cfg.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(map_transport)?;
        let status = resp.status();
        if !status.is_success() {
            return Err(BackendError::HttpStatus(status.as_u16()));
        }
        let text = resp.text().map_err(map_transport)?;
        debug!(bytes = text.len(), "chat completion received");
        let parsed: CompletionResponse = serde_json::from_str(&text).map_err(|_| BackendError::MissingContent)?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message)
            .and_then(|m| m.content)
            .ok_or(BackendError::MissingContent)
    }
}

fn map_transport(e: reqwest::Error) -> BackendError {
    if e.is_timeout() {
        BackendError::Timeout
    } else if e.is_connect() {
        BackendError::Connect(e.to_string())
    } else {
        BackendError::Other(e.to_string())
    }
}

impl ChatBackend for OpenAiClient {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, BackendError> {
        self.chat_complete(messages)
    }

    fn name(&self) -> &str {
        "live"
    }
}
