//! HTTP provider for chat-completion style endpoints.

use std::env;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use tracing::{debug, warn};

use super::{check_messages, ChatMessage, CompletionParams, LlmError, LlmProvider};

const DEFAULT_TIMEOUT_SECS: u64 = 30;
const DEFAULT_BACKOFF: Duration = Duration::from_millis(500);
const BODY_EXCERPT_CHARS: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteConfig {
    /// Full URL of the chat-completions endpoint.
    pub url: String,
    pub api_key: Option<String>,
    pub model: String,
    pub timeout: Duration,
    /// Delay before the single retry.
    pub backoff: Duration,
}

impl RemoteConfig {
    pub fn new(url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            api_key: None,
            model: model.into(),
            timeout: Duration::from_secs(DEFAULT_TIMEOUT_SECS),
            backoff: DEFAULT_BACKOFF,
        }
    }

    /// Reads CHAT_API_URL, CHAT_API_KEY, CHAT_MODEL and CHAT_TIMEOUT_SECS.
    pub fn from_env() -> Result<Self, String> {
        let url = env::var("CHAT_API_URL").map_err(|_| "CHAT_API_URL is not set".to_string())?;
        let model = env::var("CHAT_MODEL").map_err(|_| "CHAT_MODEL is not set".to_string())?;
        let mut config = Self::new(url, model);
        config.api_key = env::var("CHAT_API_KEY").ok().filter(|k| !k.is_empty());
        if let Ok(secs) = env::var("CHAT_TIMEOUT_SECS") {
            let secs: u64 = secs
                .parse()
                .map_err(|_| format!("CHAT_TIMEOUT_SECS is not a number: {secs}"))?;
            config.timeout = Duration::from_secs(secs);
        }
        Ok(config)
    }
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f32,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Deserialize)]
struct ResponseMessage {
    #[serde(default)]
    content: Option<String>,
}

pub struct RemoteProvider {
    config: RemoteConfig,
    client: reqwest::Client,
}

impl RemoteProvider {
    pub fn new(config: RemoteConfig) -> Result<Self, LlmError> {
        let client = reqwest::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        Ok(Self { config, client })
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    async fn attempt(
        &self,
        messages: &[ChatMessage],
        params: CompletionParams,
    ) -> Result<String, LlmError> {
        let body = CompletionRequest {
            model: &self.config.model,
            messages,
            temperature: params.temperature,
            max_tokens: params.max_tokens,
        };
        let mut request = self.client.post(&self.config.url).json(&body);
        if let Some(key) = &self.config.api_key {
            request = request.bearer_auth(key);
        }
        // The client timeout covers the body too; this guards the whole exchange.
        let send = async {
            let response = request.send().await.map_err(map_reqwest)?;
            let status = response.status();
            let text = response.text().await.map_err(map_reqwest)?;
            Ok::<_, LlmError>((status, text))
        };
        let (status, text) = tokio::time::timeout(self.config.timeout, send)
            .await
            .map_err(|_| LlmError::Timeout)??;
        if !status.is_success() {
            return Err(LlmError::Remote {
                status: status.as_u16(),
                body: text.chars().take(BODY_EXCERPT_CHARS).collect(),
            });
        }
        let parsed: CompletionResponse =
            serde_json::from_str(&text).map_err(|e| LlmError::BadResponse(e.to_string()))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .filter(|c| !c.trim().is_empty())
            .ok_or_else(|| LlmError::BadResponse("no message content in choices[0]".into()))
    }
}

fn map_reqwest(e: reqwest::Error) -> LlmError {
    if e.is_timeout() {
        LlmError::Timeout
    } else {
        LlmError::Transport(e.to_string())
    }
}

fn retryable(e: &LlmError) -> bool {
    match e {
        LlmError::Timeout | LlmError::Transport(_) => true,
        LlmError::Remote { status, .. } => *status == 429 || *status >= 500,
        _ => false,
    }
}

#[async_trait]
impl LlmProvider for RemoteProvider {
    fn name(&self) -> &str {
        "remote"
    }

    async fn complete(
        &self,
        messages: &[ChatMessage],
        params: CompletionParams,
    ) -> Result<String, LlmError> {
        check_messages(messages)?;
        match self.attempt(messages, params).await {
            Err(e) if retryable(&e) => {
                warn!(error = %e, backoff_ms = self.config.backoff.as_millis() as u64, "retrying chat completion");
                tokio::time::sleep(self.config.backoff).await;
                self.attempt(messages, params).await
            }
            other => {
                debug!(ok = other.is_ok(), "chat completion finished");
                other
            }
        }
    }
}
