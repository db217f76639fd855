//! Chat-completion providers.
//!
//! [`LlmProvider`] is the single seam between the engine and a language
//! model. Three implementations ship: [`RemoteProvider`] for any endpoint
//! speaking the common chat-completion JSON shape, [`ScriptedProvider`] for
//! deterministic replays, and the persona helpers in [`persona`] which drive
//! a provider as a simulated elderly user.

pub mod persona;
pub mod remote;
pub mod scripted;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use persona::{persona_reply, swap_roles, PersonaConfig};
pub use remote::{RemoteConfig, RemoteProvider};
pub use scripted::ScriptedProvider;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MessageRole {
    System,
    Assistant,
    User,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: MessageRole,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: MessageRole::System,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: MessageRole::Assistant,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: MessageRole::User,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompletionParams {
    pub temperature: f32,
    pub max_tokens: u32,
}

impl CompletionParams {
    /// Live conversation turns.
    pub const CHAT: CompletionParams = CompletionParams {
        temperature: 0.7,
        max_tokens: 512,
    };
    /// Calls whose output feeds a parser (question generation, summaries).
    pub const STRUCTURED: CompletionParams = CompletionParams {
        temperature: 0.0,
        max_tokens: 1024,
    };
}

impl Default for CompletionParams {
    fn default() -> Self {
        Self::CHAT
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LlmError {
    #[error("request timed out")]
    Timeout,
    #[error("remote error {status}: {body}")]
    Remote { status: u16, body: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("malformed provider response: {0}")]
    BadResponse(String),
    #[error("script exhausted after {served} replies")]
    ScriptExhausted { served: usize },
    #[error("invalid request: {0}")]
    InvalidRequest(&'static str),
}

/// Checks the message-list contract shared by every provider.
pub fn check_messages(messages: &[ChatMessage]) -> Result<(), LlmError> {
    match messages.first() {
        None => return Err(LlmError::InvalidRequest("messages must not be empty")),
        Some(m) if m.role != MessageRole::System => {
            return Err(LlmError::InvalidRequest("first message must be a system message"))
        }
        _ => {}
    }
    if messages
        .iter()
        .any(|m| m.role != MessageRole::System && m.content.trim().is_empty())
    {
        return Err(LlmError::InvalidRequest(
            "user and assistant messages must not be empty",
        ));
    }
    Ok(())
}

#[async_trait]
pub trait LlmProvider: Send + Sync {
    fn name(&self) -> &str;

    async fn complete(
        &self,
        messages: &[ChatMessage],
        params: CompletionParams,
    ) -> Result<String, LlmError>;
}
