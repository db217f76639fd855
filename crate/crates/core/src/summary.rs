//! Post-conversation summary: decides when to summarize, renders the summary
//! prompt, parses `New summary / New profile / Target Person` replies and
//! folds the result back into the user record.

use std::sync::LazyLock;

use regex::Regex;
use thiserror::Error;
use tracing::warn;

use crate::dialogue::DialogueEngine;
use crate::domain::{
    fold_key, ChatSummary, DialogueState, FamilyMember, Phase, Profile, ProfileWarning,
    Role, Timestamp, UserRecord,
};
use crate::llm::{ChatMessage, LlmError, LlmProvider};
use crate::prompts::PromptCatalog;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SummaryError {
    #[error("chat has no elderly turns to summarize")]
    EmptyChat,
    #[error("summary reply lacks the `{0}` block")]
    MissingBlock(&'static str),
    #[error("language model unavailable: {0}")]
    LlmUnavailable(#[source] LlmError),
}

pub fn should_summarize(state: &DialogueState, open_exchange_threshold: u32) -> bool {
    match state.phase {
        Phase::Summarizing | Phase::Ended => true,
        Phase::Open => state.open_exchanges >= open_exchange_threshold,
        Phase::Structured => false,
    }
}

pub fn render_chat_history(state: &DialogueState) -> String {
    state
        .turns
        .iter()
        .map(|t| format!("{}: {}", t.role, t.text))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn build_summary_prompt(
    catalog: &PromptCatalog,
    user: &UserRecord,
    state: &DialogueState,
) -> Result<String, SummaryError> {
    if !state.turns.iter().any(|t| t.role == Role::Elderly) {
        return Err(SummaryError::EmptyChat);
    }
    let profile = user.profile.to_string();
    let history = render_chat_history(state);
    let family = user.roster_names().join(", ");
    Ok(catalog.summary.render(&[
        ("background", user.background.trim()),
        ("profile", profile.as_str()),
        ("chat_history", history.as_str()),
        ("family members", family.as_str()),
    ]))
}

static LABEL_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)(new\s+summary|new\s+profile|target\s+person)\s*[:=]?").unwrap()
});
static LIKE_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\blikes?\s*[=:]\s*\[([^\]]*)\]").unwrap());
static DISLIKE_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\bdislikes?\s*[=:]\s*\[([^\]]*)\]").unwrap());

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Label {
    Summary,
    Profile,
    Target,
}

fn label_of(text: &str) -> Label {
    let key: String = text
        .chars()
        .filter(|c| c.is_alphabetic())
        .collect::<String>()
        .to_lowercase();
    match key.as_str() {
        "newsummary" => Label::Summary,
        "newprofile" => Label::Profile,
        _ => Label::Target,
    }
}

/// Splits the reply into its labelled blocks; first occurrence wins.
fn blocks(raw: &str) -> [Option<&str>; 3] {
    let labels: Vec<(Label, usize, usize)> = LABEL_RE
        .captures_iter(raw)
        .map(|c| {
            let whole = c.get(0).expect("group 0");
            (label_of(&c[1]), whole.start(), whole.end())
        })
        .collect();
    let mut out = [None; 3];
    for (i, (label, _, end)) in labels.iter().enumerate() {
        let stop = labels.get(i + 1).map_or(raw.len(), |next| next.1);
        let slot = &mut out[*label as usize];
        if slot.is_none() {
            *slot = Some(raw[*end..stop].trim());
        }
    }
    out
}

fn trim_wrapping(s: &str) -> &str {
    let s = s.trim();
    let s = s
        .strip_prefix('[')
        .and_then(|x| x.strip_suffix(']'))
        .unwrap_or(s);
    s.trim_matches(|c: char| c.is_whitespace() || matches!(c, '"' | '\u{201c}' | '\u{201d}'))
}

fn split_items(list: &str) -> Vec<String> {
    list.split(',')
        .map(|item| {
            item.trim()
                .trim_matches(|c: char| matches!(c, '"' | '\'' | '\u{201c}' | '\u{201d}'))
                .trim()
                .to_string()
        })
        .filter(|item| !item.is_empty())
        .collect()
}

/// Reads `Like= [...]` and `Dislike= [...]` lists; either may be absent but
/// not both.
pub fn parse_profile_block(block: &str) -> Option<Profile> {
    let likes = LIKE_RE.captures(block).map(|c| split_items(&c[1]));
    let dislikes = DISLIKE_RE.captures(block).map(|c| split_items(&c[1]));
    if likes.is_none() && dislikes.is_none() {
        return None;
    }
    Some(Profile {
        likes: likes.unwrap_or_default(),
        dislikes: dislikes.unwrap_or_default(),
    })
}

/// Maps a suggested person onto the roster by name, then by a relationship
/// held by exactly one member.
pub fn resolve_target(suggested: &str, roster: &[FamilyMember]) -> Option<String> {
    let key = fold_key(suggested);
    let key = key.strip_prefix("the ").unwrap_or(&key).trim().to_string();
    if let Some(m) = roster.iter().find(|m| fold_key(&m.name) == key) {
        return Some(m.name.clone());
    }
    let mut by_relationship = roster.iter().filter(|m| fold_key(&m.relationship) == key);
    match (by_relationship.next(), by_relationship.next()) {
        (Some(m), None) => Some(m.name.clone()),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedSummary {
    pub summary_text: String,
    pub new_profile: Profile,
    pub target_person: Option<String>,
    pub warnings: Vec<String>,
}

pub fn parse_summary_response(
    raw: &str,
    roster: &[FamilyMember],
) -> Result<ParsedSummary, SummaryError> {
    let [summary, profile, target] = blocks(raw);
    let summary_text = summary
        .map(trim_wrapping)
        .filter(|s| !s.is_empty())
        .ok_or(SummaryError::MissingBlock("New summary"))?
        .to_string();
    let new_profile = profile
        .and_then(parse_profile_block)
        .ok_or(SummaryError::MissingBlock("New profile"))?;

    let mut warnings = Vec::new();
    let suggested = target
        .and_then(|t| t.lines().next())
        .map(|t| t.trim_matches(|c: char| c.is_whitespace() || "[]\"'.".contains(c)))
        .filter(|t| !t.is_empty() && !matches!(fold_key(t).as_str(), "none" | "n/a" | "nobody"));
    let target_person = suggested.and_then(|name| {
        let resolved = resolve_target(name, roster);
        if resolved.is_none() {
            warn!(target = name, "suggested target person is not in the roster");
            warnings.push(format!("target person `{name}` is not in the family roster; dropped"));
        }
        resolved
    });
    Ok(ParsedSummary {
        summary_text,
        new_profile,
        target_person,
        warnings,
    })
}

/// Renders a summary reply in the shape [`parse_summary_response`] reads.
pub fn format_summary_response(summary_text: &str, profile: &Profile, target: Option<&str>) -> String {
    format!(
        "New summary: {summary_text}\nNew profile: {{Like= [{}], Dislike= [{}]}}\nTarget Person: {}",
        profile.likes.join(", "),
        profile.dislikes.join(", "),
        target.unwrap_or("none")
    )
}

fn describe(w: &ProfileWarning) -> String {
    match w {
        ProfileWarning::Truncated { original, kept } => {
            format!("profile entry `{original}` truncated to `{kept}`")
        }
        ProfileWarning::Duplicate(entry) => format!("duplicate profile entry `{entry}` dropped"),
        ProfileWarning::Empty => "empty profile entry dropped".to_string(),
    }
}

impl ParsedSummary {
    /// Normalizes the profile and stamps the record.
    pub fn into_summary(
        self,
        summary_id: String,
        state: &DialogueState,
        created_at: Timestamp,
    ) -> ChatSummary {
        let (new_profile, profile_warnings) = self.new_profile.normalize();
        let mut warnings = self.warnings;
        warnings.extend(profile_warnings.iter().map(describe));
        ChatSummary {
            summary_id,
            user_id: state.user_id.clone(),
            session_id: state.session_id.clone(),
            photo_id: state.photo_id.clone(),
            summary_text: self.summary_text,
            new_profile,
            target_person: self.target_person,
            created_at,
            parsed: true,
            warnings,
        }
    }
}

/// Replaces the stored profile with the summary's. Unparsed summaries leave
/// the user untouched.
pub fn apply_summary(user: &UserRecord, summary: &ChatSummary) -> UserRecord {
    let mut next = user.clone();
    if summary.parsed {
        next.profile = summary.new_profile.normalized();
    }
    next
}

const SUMMARY_REMINDER: &str = "Please answer again using exactly this format:\nNew summary: <concise chat summary>\nNew profile: {Like= [item, item], Dislike= [item, item]}\nTarget Person: <one family member or none>";

/// Runs the summary prompt against `llm`, retrying once on a malformed
/// reply. If the retry is malformed too, the raw text is kept as an
/// unparsed summary carrying the previous profile.
pub async fn summarize_session(
    engine: &DialogueEngine,
    user: &UserRecord,
    state: &DialogueState,
    llm: &dyn LlmProvider,
    summary_id: String,
    now: Timestamp,
) -> Result<ChatSummary, SummaryError> {
    let prompt = build_summary_prompt(engine.prompts(), user, state)?;
    let params = engine.config().structured_params;
    let mut messages = vec![ChatMessage::system(prompt)];
    let mut raw = llm
        .complete(&messages, params)
        .await
        .map_err(SummaryError::LlmUnavailable)?;
    let mut parsed = parse_summary_response(&raw, &user.family);
    if let Err(err) = &parsed {
        warn!(session = %state.session_id, %err, "retrying summary");
        if !raw.trim().is_empty() {
            messages.push(ChatMessage::assistant(raw.clone()));
        }
        messages.push(ChatMessage::user(SUMMARY_REMINDER));
        raw = llm
            .complete(&messages, params)
            .await
            .map_err(SummaryError::LlmUnavailable)?;
        parsed = parse_summary_response(&raw, &user.family);
    }
    Ok(match parsed {
        Ok(p) => p.into_summary(summary_id, state, now),
        Err(err) => ChatSummary {
            summary_id,
            user_id: state.user_id.clone(),
            session_id: state.session_id.clone(),
            photo_id: state.photo_id.clone(),
            summary_text: raw,
            new_profile: user.profile.clone(),
            target_person: None,
            created_at: now,
            parsed: false,
            warnings: vec![err.to_string()],
        },
    })
}

/// Differences between two profiles, for reports.
#[derive(Debug, Clone, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ProfileDiff {
    pub added_likes: Vec<String>,
    pub removed_likes: Vec<String>,
    pub added_dislikes: Vec<String>,
    pub removed_dislikes: Vec<String>,
}

impl ProfileDiff {
    pub fn between(before: &Profile, after: &Profile) -> Self {
        fn minus(a: &[String], b: &[String]) -> Vec<String> {
            a.iter()
                .filter(|x| !b.iter().any(|y| fold_key(x) == fold_key(y)))
                .cloned()
                .collect()
        }
        Self {
            added_likes: minus(&after.likes, &before.likes),
            removed_likes: minus(&before.likes, &after.likes),
            added_dislikes: minus(&after.dislikes, &before.dislikes),
            removed_dislikes: minus(&before.dislikes, &after.dislikes),
        }
    }
}
