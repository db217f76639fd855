//! Simulated elderly user for evaluation runs.

use serde::{Deserialize, Serialize};

use super::{ChatMessage, CompletionParams, LlmError, LlmProvider, MessageRole};

/// Default persona shipped with the harness. Original text, not taken from
/// any published evaluation.
pub const DEFAULT_PERSONA_PROMPT: &str = "You are role-playing a retired grandfather in his late seventies who is looking at family photos with a friendly helper. You love talking about your grandson and often drift off-topic into stories about him, his hobbies and family outings. Answer in one or two short, warm sentences, the way an elderly person speaks. Sometimes you answer the question directly, sometimes you get it slightly wrong, and sometimes you change the subject.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonaConfig {
    pub persona_prompt: String,
    pub max_rounds: u32,
}

impl Default for PersonaConfig {
    fn default() -> Self {
        Self {
            persona_prompt: DEFAULT_PERSONA_PROMPT.to_string(),
            max_rounds: 20,
        }
    }
}

/// Exchanges assistant and user roles; system messages are untouched.
pub fn swap_roles(messages: &[ChatMessage]) -> Vec<ChatMessage> {
    messages
        .iter()
        .map(|m| ChatMessage {
            role: match m.role {
                MessageRole::Assistant => MessageRole::User,
                MessageRole::User => MessageRole::Assistant,
                MessageRole::System => MessageRole::System,
            },
            content: m.content.clone(),
        })
        .collect()
}

/// The persona's next utterance. `transcript` is in chatbot perspective
/// (chatbot = assistant, elderly = user) and must end with a chatbot line.
pub async fn persona_reply(
    config: &PersonaConfig,
    transcript: &[ChatMessage],
    llm: &dyn LlmProvider,
) -> Result<String, LlmError> {
    match transcript.last() {
        None => return Err(LlmError::InvalidRequest("transcript must not be empty")),
        Some(m) if m.role != MessageRole::Assistant => {
            return Err(LlmError::InvalidRequest(
                "transcript must end with a chatbot message",
            ))
        }
        _ => {}
    }
    let mut messages = Vec::with_capacity(transcript.len() + 1);
    messages.push(ChatMessage::system(config.persona_prompt.clone()));
    messages.extend(
        swap_roles(transcript)
            .into_iter()
            .filter(|m| m.role != MessageRole::System),
    );
    let reply = llm.complete(&messages, CompletionParams::CHAT).await?;
    Ok(reply.trim().to_string())
}
