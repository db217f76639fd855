//! Fixture playback provider.

use std::fs;
use std::path::Path;
use std::sync::Mutex;

use async_trait::async_trait;

use super::{check_messages, ChatMessage, CompletionParams, LlmError, LlmProvider};

/// Returns its scripted replies in call order, ignoring the prompt.
///
/// Script files hold one reply per line. `\n` inside a line stands for a
/// newline and `\\` for a backslash; blank lines are skipped.
#[derive(Debug)]
pub struct ScriptedProvider {
    name: String,
    replies: Vec<String>,
    cursor: Mutex<usize>,
}

impl ScriptedProvider {
    pub fn new<I, S>(replies: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            name: "scripted".into(),
            replies: replies.into_iter().map(Into::into).collect(),
            cursor: Mutex::new(0),
        }
    }

    pub fn parse_script(text: &str) -> Vec<String> {
        text.lines()
            .filter(|line| !line.trim().is_empty())
            .map(unescape_line)
            .collect()
    }

    pub fn from_file(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        let mut provider = Self::new(Self::parse_script(&text));
        provider.name = format!("scripted:{}", path.display());
        Ok(provider)
    }

    pub fn served(&self) -> usize {
        *self.cursor.lock().expect("script cursor poisoned")
    }

    pub fn remaining(&self) -> usize {
        self.replies.len() - self.served()
    }

    pub fn replies(&self) -> &[String] {
        &self.replies
    }
}

fn unescape_line(line: &str) -> String {
    let mut out = String::with_capacity(line.len());
    let mut chars = line.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('n') => out.push('\n'),
            Some('\\') => out.push('\\'),
            Some(other) => {
                out.push('\\');
                out.push(other);
            }
            None => out.push('\\'),
        }
    }
    out
}

/// Inverse of the script line escaping.
pub fn escape_line(reply: &str) -> String {
    reply.replace('\\', "\\\\").replace('\n', "\\n")
}

#[async_trait]
impl LlmProvider for ScriptedProvider {
    fn name(&self) -> &str {
        &self.name
    }

    async fn complete(
        &self,
        messages: &[ChatMessage],
        _params: CompletionParams,
    ) -> Result<String, LlmError> {
        check_messages(messages)?;
        let mut cursor = self.cursor.lock().expect("script cursor poisoned");
        let reply = self
            .replies
            .get(*cursor)
            .cloned()
            .ok_or(LlmError::ScriptExhausted { served: *cursor })?;
        *cursor += 1;
        Ok(reply)
    }
}
