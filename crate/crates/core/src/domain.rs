//! Shared domain types for users, photos, question plans and dialogue sessions.
//!
//! Everything in here is a plain value. Mutation of sessions happens in
//! [`crate::dialogue`]; storage lives in [`crate::store`].

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Seconds since the Unix epoch, UTC.
pub type Timestamp = i64;

/// Profile entries longer than this many words are truncated.
pub const MAX_PROFILE_ENTRY_WORDS: usize = 6;

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                Self(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_string())
            }
        }
    };
}

id_type!(
    /// Identifier of an elderly user.
    UserId
);
id_type!(
    /// Identifier of a photo or an imported message topic.
    PhotoId
);
id_type!(
    /// Identifier of a dialogue session.
    SessionId
);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DomainError {
    #[error("duplicate family member `{0}`")]
    DuplicateMember(String),
    #[error("{0} must not be empty")]
    EmptyName(&'static str),
    #[error("`{0}` is not in the user's family roster")]
    UnknownMember(String),
    #[error("photo bookkeeping inconsistent: discussed_count={count}, last_discussed_at={last:?}")]
    DiscussionBookkeeping { count: u32, last: Option<Timestamp> },
}

/// Trimmed, lowercased form used for every name and profile comparison.
pub fn fold_key(s: &str) -> String {
    s.trim().to_lowercase()
}

pub fn names_match(a: &str, b: &str) -> bool {
    fold_key(a) == fold_key(b)
}

/// Likes and dislikes distilled from past chats.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Profile {
    #[serde(default)]
    pub likes: Vec<String>,
    #[serde(default)]
    pub dislikes: Vec<String>,
}

/// Something that was fixed up while normalizing a profile.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProfileWarning {
    Truncated { original: String, kept: String },
    Duplicate(String),
    Empty,
}

impl Profile {
    pub fn new<L, D>(likes: L, dislikes: D) -> Self
    where
        L: IntoIterator,
        L::Item: Into<String>,
        D: IntoIterator,
        D::Item: Into<String>,
    {
        Self {
            likes: likes.into_iter().map(Into::into).collect(),
            dislikes: dislikes.into_iter().map(Into::into).collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.likes.is_empty() && self.dislikes.is_empty()
    }

    /// Trims entries, drops empties, truncates long entries at a word
    /// boundary and removes case-insensitive duplicates (first wins).
    pub fn normalize(&self) -> (Profile, Vec<ProfileWarning>) {
        let mut warnings = Vec::new();
        let likes = normalize_list(&self.likes, &mut warnings);
        let dislikes = normalize_list(&self.dislikes, &mut warnings);
        (Profile { likes, dislikes }, warnings)
    }

    pub fn normalized(&self) -> Profile {
        self.normalize().0
    }
}

fn normalize_list(items: &[String], warnings: &mut Vec<ProfileWarning>) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(items.len());
    for raw in items {
        let words: Vec<&str> = raw.split_whitespace().collect();
        if words.is_empty() {
            warnings.push(ProfileWarning::Empty);
            continue;
        }
        let entry = if words.len() > MAX_PROFILE_ENTRY_WORDS {
            let kept = words[..MAX_PROFILE_ENTRY_WORDS].join(" ");
            warnings.push(ProfileWarning::Truncated {
                original: raw.clone(),
                kept: kept.clone(),
            });
            kept
        } else {
            words.join(" ")
        };
        if seen.insert(fold_key(&entry)) {
            out.push(entry);
        } else {
            warnings.push(ProfileWarning::Duplicate(entry));
        }
    }
    out
}

impl fmt::Display for Profile {
    /// Renders as `Like=[a, b], Dislike=[c]`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Like=[{}], Dislike=[{}]",
            self.likes.join(", "),
            self.dislikes.join(", ")
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyMember {
    pub name: String,
    pub relationship: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub face_ref: Option<String>,
    /// Caregiver-supplied face embedding used by the vector matcher.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub face_embedding: Option<Vec<f32>>,
}

impl FamilyMember {
    pub fn new(name: impl Into<String>, relationship: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            relationship: relationship.into(),
            face_ref: None,
            face_embedding: None,
        }
    }

    /// `name (relationship)`, or just the name when the relationship is blank.
    pub fn label(&self) -> String {
        if self.relationship.trim().is_empty() {
            self.name.clone()
        } else {
            format!("{} ({})", self.name, self.relationship)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserRecord {
    pub user_id: UserId,
    pub display_name: String,
    #[serde(default)]
    pub background: String,
    #[serde(default)]
    pub profile: Profile,
    #[serde(default)]
    pub family: Vec<FamilyMember>,
}

impl UserRecord {
    pub fn member(&self, name: &str) -> Option<&FamilyMember> {
        self.family.iter().find(|m| names_match(&m.name, name))
    }

    pub fn roster_names(&self) -> Vec<String> {
        self.family.iter().map(|m| m.name.clone()).collect()
    }
}

/// Checks the caregiver-supplied user record.
pub fn validate_user(record: UserRecord) -> Result<UserRecord, DomainError> {
    if record.user_id.as_str().trim().is_empty() {
        return Err(DomainError::EmptyName("user_id"));
    }
    if record.display_name.trim().is_empty() {
        return Err(DomainError::EmptyName("display_name"));
    }
    let mut seen = HashSet::new();
    for member in &record.family {
        if member.name.trim().is_empty() {
            return Err(DomainError::EmptyName("family member name"));
        }
        if !seen.insert(fold_key(&member.name)) {
            return Err(DomainError::DuplicateMember(member.name.trim().to_string()));
        }
    }
    Ok(record)
}

/// Where a discussion topic came from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopicSource {
    #[default]
    Photo,
    /// Text conversation imported from a messaging app; has no image.
    MessageImport,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaPair {
    pub question: String,
    pub answer: String,
}

impl QaPair {
    pub fn new(question: impl Into<String>, answer: impl Into<String>) -> Self {
        Self {
            question: question.into(),
            answer: answer.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Photo {
    pub photo_id: PhotoId,
    pub owner: UserId,
    pub uploaded_at: Timestamp,
    pub description: String,
    #[serde(default)]
    pub members_present: Vec<String>,
    #[serde(default)]
    pub last_discussed_at: Option<Timestamp>,
    #[serde(default)]
    pub discussed_count: u32,
    #[serde(default)]
    pub source: TopicSource,
    /// Question/answer pairs generated (or reviewed) for this photo.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub qa_pairs: Vec<QaPair>,
}

impl Photo {
    pub fn new(
        photo_id: impl Into<PhotoId>,
        owner: impl Into<UserId>,
        uploaded_at: Timestamp,
        description: impl Into<String>,
    ) -> Self {
        Self {
            photo_id: photo_id.into(),
            owner: owner.into(),
            uploaded_at,
            description: description.into(),
            members_present: Vec::new(),
            last_discussed_at: None,
            discussed_count: 0,
            source: TopicSource::Photo,
            qa_pairs: Vec::new(),
        }
    }

    pub fn with_members<I, S>(mut self, members: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.members_present = members.into_iter().map(Into::into).collect();
        self
    }

    pub fn features(&self, name: &str) -> bool {
        self.members_present.iter().any(|m| names_match(m, name))
    }

    pub fn never_discussed(&self) -> bool {
        self.discussed_count == 0
    }

    /// Checks roster membership and the discussion bookkeeping invariant.
    pub fn validate(&self, owner: &UserRecord) -> Result<(), DomainError> {
        for name in &self.members_present {
            if owner.member(name).is_none() {
                return Err(DomainError::UnknownMember(name.clone()));
            }
        }
        if (self.discussed_count == 0) != self.last_discussed_at.is_none() {
            return Err(DomainError::DiscussionBookkeeping {
                count: self.discussed_count,
                last: self.last_discussed_at,
            });
        }
        Ok(())
    }
}

impl From<String> for PhotoId {
    fn from(s: String) -> Self {
        Self(s)
    }
}

impl From<String> for UserId {
    fn from(s: String) -> Self {
        Self(s)
    }
}

impl From<String> for SessionId {
    fn from(s: String) -> Self {
        Self(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum QaKind {
    Who,
    Where,
    When,
    What,
    Open,
}

impl fmt::Display for QaKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QaKind::Who => "WHO",
            QaKind::Where => "WHERE",
            QaKind::When => "WHEN",
            QaKind::What => "WHAT",
            QaKind::Open => "OPEN",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum QaStatus {
    Pending,
    Asked,
    Done,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaItem {
    pub kind: QaKind,
    pub question: String,
    pub expected_answer: String,
    pub status: QaStatus,
}

impl QaItem {
    pub fn new(kind: QaKind, question: impl Into<String>, expected_answer: impl Into<String>) -> Self {
        Self {
            kind,
            question: question.into(),
            expected_answer: expected_answer.into(),
            status: QaStatus::Pending,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionPlan {
    pub items: Vec<QaItem>,
    pub cursor: usize,
}

impl QuestionPlan {
    pub fn current(&self) -> Option<&QaItem> {
        self.items.get(self.cursor)
    }

    pub fn next_after_cursor(&self) -> Option<&QaItem> {
        self.items.get(self.cursor + 1)
    }

    /// Some item (the open-ended one included) is still waiting for an answer.
    pub fn has_remaining(&self) -> bool {
        self.cursor < self.items.len()
    }

    /// A concrete W-question is still unanswered.
    pub fn has_pending_structured(&self) -> bool {
        self.current().is_some_and(|item| item.kind != QaKind::Open)
    }

    pub fn kinds(&self) -> Vec<QaKind> {
        self.items.iter().map(|i| i.kind).collect()
    }

    /// Structural checks: starts with WHO, ends with OPEN, cursor in range
    /// and expected answers present where required.
    pub fn is_well_formed(&self) -> bool {
        let ends_ok = matches!(self.items.first(), Some(i) if i.kind == QaKind::Who)
            && matches!(self.items.last(), Some(i) if i.kind == QaKind::Open);
        let answers_ok = self.items.iter().all(|i| match i.kind {
            QaKind::Open => i.expected_answer.is_empty(),
            QaKind::Where | QaKind::When | QaKind::What => !i.expected_answer.trim().is_empty(),
            QaKind::Who => true,
        });
        ends_ok && answers_ok && self.cursor <= self.items.len()
    }
}

/// The flow-control action chosen by the agent each turn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AgentOption {
    /// Correct answer: acknowledge and ask the next question.
    A,
    /// Incorrect answer: gently correct and ask the next question.
    B,
    /// Off-topic reply: engage with it.
    C,
    /// Redirect: re-ask the current question or offer a new photo.
    D,
    /// Farewell.
    E,
}

impl AgentOption {
    pub const ALL: [AgentOption; 5] = [
        AgentOption::A,
        AgentOption::B,
        AgentOption::C,
        AgentOption::D,
        AgentOption::E,
    ];

    pub fn letter(self) -> char {
        match self {
            AgentOption::A => 'A',
            AgentOption::B => 'B',
            AgentOption::C => 'C',
            AgentOption::D => 'D',
            AgentOption::E => 'E',
        }
    }

    pub fn from_letter(c: char) -> Option<Self> {
        match c.to_ascii_uppercase() {
            'A' => Some(AgentOption::A),
            'B' => Some(AgentOption::B),
            'C' => Some(AgentOption::C),
            'D' => Some(AgentOption::D),
            'E' => Some(AgentOption::E),
            _ => None,
        }
    }
}

impl fmt::Display for AgentOption {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

impl FromStr for AgentOption {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut chars = s.trim().chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) => Self::from_letter(c).ok_or_else(|| format!("unknown option `{s}`")),
            _ => Err(format!("unknown option `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Role {
    Chatbot,
    Elderly,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Chatbot => "Chatbot",
            Role::Elderly => "Elderly",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    /// 1-based round number.
    pub index: u32,
    pub role: Role,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub option: Option<AgentOption>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question_kind: Option<QaKind>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Phase {
    Structured,
    Open,
    Summarizing,
    Ended,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Structured => "STRUCTURED",
            Phase::Open => "OPEN",
            Phase::Summarizing => "SUMMARIZING",
            Phase::Ended => "ENDED",
        })
    }
}

/// An option the engine replaced because the agent picked a disallowed one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Coercion {
    pub round: u32,
    pub requested: AgentOption,
    pub applied: AgentOption,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueState {
    pub session_id: SessionId,
    pub user_id: UserId,
    pub photo_id: PhotoId,
    pub plan: QuestionPlan,
    #[serde(default)]
    pub option_history: Vec<AgentOption>,
    #[serde(default)]
    pub consecutive_c: u32,
    pub phase: Phase,
    #[serde(default)]
    pub open_exchanges: u32,
    #[serde(default)]
    pub turns: Vec<Turn>,
    #[serde(default)]
    pub coercions: Vec<Coercion>,
    /// Number of agent replies that could not be parsed even after the retry.
    #[serde(default)]
    pub fallbacks: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary_id: Option<String>,
    pub started_at: Timestamp,
}

impl DialogueState {
    pub fn next_round(&self) -> u32 {
        self.turns.len() as u32 + 1
    }

    pub fn elderly_turns(&self) -> usize {
        self.turns.iter().filter(|t| t.role == Role::Elderly).count()
    }

    pub fn last_option(&self) -> Option<AgentOption> {
        self.option_history.last().copied()
    }

    pub fn is_active(&self) -> bool {
        matches!(self.phase, Phase::Structured | Phase::Open)
    }
}

/// Length of the all-C suffix of an option history.
pub fn trailing_c_count(history: &[AgentOption]) -> u32 {
    history
        .iter()
        .rev()
        .take_while(|o| **o == AgentOption::C)
        .count() as u32
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatSummary {
    pub summary_id: String,
    pub user_id: UserId,
    pub session_id: SessionId,
    pub photo_id: PhotoId,
    pub summary_text: String,
    pub new_profile: Profile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_person: Option<String>,
    pub created_at: Timestamp,
    /// False when the agent's reply could not be parsed; `summary_text`
    /// then holds the raw reply and the profile was left untouched.
    #[serde(default = "default_true")]
    pub parsed: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

fn default_true() -> bool {
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    fn user(members: &[(&str, &str)]) -> UserRecord {
        UserRecord {
            user_id: "u1".into(),
            display_name: "Mr Chan".into(),
            background: String::new(),
            profile: Profile::default(),
            family: members.iter().map(|(n, r)| FamilyMember::new(*n, *r)).collect(),
        }
    }

    #[test]
    fn well_formed_user_is_accepted() {
        let u = user(&[("grandson", "grandson"), ("daughter", "daughter")]);
        assert_eq!(validate_user(u.clone()), Ok(u));
    }

    #[test]
    fn duplicate_member_is_rejected() {
        let u = user(&[("Ming", "grandson"), ("Ming", "son")]);
        assert_eq!(validate_user(u), Err(DomainError::DuplicateMember("Ming".into())));
        let u = user(&[("Ming", "grandson"), (" ming ", "son")]);
        assert!(matches!(validate_user(u), Err(DomainError::DuplicateMember(_))));
    }

    #[test]
    fn empty_display_name_is_rejected() {
        let mut u = user(&[]);
        u.display_name = "  ".into();
        assert_eq!(validate_user(u), Err(DomainError::EmptyName("display_name")));
    }

    #[test]
    fn profile_normalization_dedupes_and_truncates() {
        let p = Profile::new(
            ["penguins", " Penguins ", "", "one two three four five six seven"],
            ["son-in-law"],
        );
        let (n, warnings) = p.normalize();
        assert_eq!(n.likes, vec!["penguins", "one two three four five six"]);
        assert_eq!(n.dislikes, vec!["son-in-law"]);
        assert_eq!(warnings.len(), 3);
        assert_eq!(n.normalized(), n);
    }

    #[test]
    fn profile_renders_empty_lists() {
        assert_eq!(Profile::default().to_string(), "Like=[], Dislike=[]");
    }

    #[test]
    fn photo_bookkeeping_invariant() {
        let u = user(&[("grandson", "grandson")]);
        let mut p = Photo::new("p1", "u1", 10, "desc").with_members(["Grandson"]);
        assert!(p.validate(&u).is_ok());
        p.discussed_count = 1;
        assert!(p.validate(&u).is_err());
        p.last_discussed_at = Some(5);
        assert!(p.validate(&u).is_ok());
        p.members_present.push("neighbor".into());
        assert_eq!(p.validate(&u), Err(DomainError::UnknownMember("neighbor".into())));
    }

    #[test]
    fn trailing_c_counts_suffix_only() {
        use AgentOption::*;
        assert_eq!(trailing_c_count(&[]), 0);
        assert_eq!(trailing_c_count(&[C, C, D]), 0);
        assert_eq!(trailing_c_count(&[C, A, C, C]), 2);
    }

    #[test]
    fn option_letters_parse_case_insensitively() {
        assert_eq!("c".parse::<AgentOption>(), Ok(AgentOption::C));
        assert!("F".parse::<AgentOption>().is_err());
        assert!("AB".parse::<AgentOption>().is_err());
    }
}
