//! Chat backends for the navigator: an OpenAI-compatible HTTP client and
//! deterministic in-process substitutes.

mod openai;
mod scripted;

pub use openai::{EndpointConfig, OpenAiClient, API_KEY_ENV};
pub use scripted::{
    DelayedBackend, FailingBackend, FuzzBackend, ScriptedEqualizer, ScriptedSequence, ScriptedStatic,
    EQUALIZER_EPSILON,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum BackendError {
    #[error("connection failed: {0}")]
    Connect(String),
    #[error("request timed out")]
    Timeout,
    #[error("endpoint returned HTTP {0}")]
    HttpStatus(u16),
    #[error("response has no choices[0].message.content")]
    MissingContent,
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("{0}")]
    Other(String),
}

/// Something that turns a message pair into response text.
///
/// A backend only ever returns text or an error; it has no way to touch
/// control parameters itself.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, BackendError>;

    fn name(&self) -> &str;
}

impl<B: ChatBackend + ?Sized> ChatBackend for std::sync::Arc<B> {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, BackendError> {
        (**self).complete(messages)
    }

    fn name(&self) -> &str {
        (**self).name()
    }
}

impl<B: ChatBackend + ?Sized> ChatBackend for Box<B> {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, BackendError> {
        (**self).complete(messages)
    }

    fn name(&self) -> &str {
        (**self).name()
    }
}
