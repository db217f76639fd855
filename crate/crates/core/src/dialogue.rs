//! Goal-oriented flow control.
//!
//! Each elderly reply is sent to the agent together with the current and
//! next planned question; the agent answers with one of five options
//! (A-E) plus a message. The engine restricts which options are legal:
//!
//! * with no history, or after A, B or D: `{A, B, C, E}`
//! * after a C, while fewer than `max_consecutive_c` Cs in a row: `{C, D, E}`
//! * after `max_consecutive_c` Cs in a row: `{D, E}`
//! * A and B are withdrawn once every planned question has been answered
//!
//! Disallowed options are struck from the rendered prompt and, should the
//! agent pick one anyway, replaced by D (or E) before being applied.

use std::fmt;

use patterns::{OPTION_RE, RESPONSE_RE};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{debug, warn};

use crate::domain::{
    trailing_c_count, AgentOption, Coercion, DialogueState, Phase, Photo, QaKind, QaPair,
    QaStatus, QuestionPlan, Role, SessionId, Timestamp, Turn, UserRecord,
};
use crate::llm::{ChatMessage, CompletionParams, LlmError, LlmProvider};
use crate::prompts::PromptCatalog;
use crate::qa::{self, QaError};

pub const DEFAULT_MAX_CONSECUTIVE_C: u32 = 2;
pub const DEFAULT_OPEN_EXCHANGE_THRESHOLD: u32 = 4;

pub const OPEN_ENDED_ANSWER: &str = "(open-ended)";
pub const NO_NEXT_QUESTION: &str = "(none; offer a new photo)";
const REASK_PREFIX: &str = "Let's go back to the photo.";
const OFFER_TEXT: &str = "Would you like to continue chatting about another photo?";

/// A small set of [`AgentOption`]s.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct OptionSet(u8);

impl OptionSet {
    pub const EMPTY: OptionSet = OptionSet(0);

    pub fn of(options: &[AgentOption]) -> Self {
        options.iter().copied().collect()
    }

    fn bit(option: AgentOption) -> u8 {
        1 << (option as u8)
    }

    pub fn contains(self, option: AgentOption) -> bool {
        self.0 & Self::bit(option) != 0
    }

    pub fn insert(&mut self, option: AgentOption) {
        self.0 |= Self::bit(option);
    }

    pub fn remove(&mut self, option: AgentOption) {
        self.0 &= !Self::bit(option);
    }

    pub fn iter(self) -> impl Iterator<Item = AgentOption> {
        AgentOption::ALL.into_iter().filter(move |o| self.contains(*o))
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    /// Letters joined with `/`, e.g. `C/D/E`.
    pub fn slashed(self) -> String {
        self.iter()
            .map(|o| o.letter().to_string())
            .collect::<Vec<_>>()
            .join("/")
    }
}

impl FromIterator<AgentOption> for OptionSet {
    fn from_iter<I: IntoIterator<Item = AgentOption>>(iter: I) -> Self {
        let mut set = OptionSet::EMPTY;
        for option in iter {
            set.insert(option);
        }
        set
    }
}

impl fmt::Debug for OptionSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, o) in self.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{o}")?;
        }
        write!(f, "}}")
    }
}

/// Option-transition rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowPolicy {
    pub max_consecutive_c: u32,
}

impl Default for FlowPolicy {
    fn default() -> Self {
        Self {
            max_consecutive_c: DEFAULT_MAX_CONSECUTIVE_C,
        }
    }
}

impl FlowPolicy {
    pub fn new(max_consecutive_c: u32) -> Self {
        assert!(max_consecutive_c >= 1, "max_consecutive_c must be at least 1");
        Self { max_consecutive_c }
    }

    pub fn allowed_options(
        &self,
        history: &[AgentOption],
        consecutive_c: u32,
        has_remaining_question: bool,
    ) -> OptionSet {
        use AgentOption::*;
        let mut set = match history.last() {
            Some(C) if consecutive_c >= self.max_consecutive_c => OptionSet::of(&[D, E]),
            Some(C) => OptionSet::of(&[C, D, E]),
            _ => OptionSet::of(&[A, B, C, E]),
        };
        if !has_remaining_question {
            set.remove(A);
            set.remove(B);
        }
        set
    }

    pub fn allowed_for(&self, state: &DialogueState) -> OptionSet {
        self.allowed_options(
            &state.option_history,
            state.consecutive_c,
            state.plan.has_remaining(),
        )
    }

    /// Positions in `history` whose option was not allowed given the prefix
    /// before it. Only history-driven rules are checked.
    pub fn violations(&self, history: &[AgentOption]) -> Vec<usize> {
        (0..history.len())
            .filter(|&i| {
                let prefix = &history[..i];
                !self
                    .allowed_options(prefix, trailing_c_count(prefix), true)
                    .contains(history[i])
            })
            .collect()
    }
}

/// Allowed options under the default policy.
pub fn allowed_options(
    history: &[AgentOption],
    consecutive_c: u32,
    has_remaining_question: bool,
) -> OptionSet {
    FlowPolicy::default().allowed_options(history, consecutive_c, has_remaining_question)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentDecision {
    pub option: AgentOption,
    pub response_text: String,
}

impl AgentDecision {
    pub fn new(option: AgentOption, response_text: impl Into<String>) -> Self {
        Self {
            option,
            response_text: response_text.into(),
        }
    }

    /// `option:X, response: ...`
    pub fn to_wire(&self) -> String {
        format!("option:{}, response: {}", self.option, self.response_text)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unparseable agent reply: {excerpt}")]
pub struct Unparseable {
    pub excerpt: String,
}

mod patterns {
    use regex::Regex;
    use std::sync::LazyLock;

    pub static OPTION_RE: LazyLock<Regex> =
        LazyLock::new(|| Regex::new(r"(?i)option[^a-z0-9\n]{0,6}([a-e])\b").unwrap());
    pub static RESPONSE_RE: LazyLock<Regex> =
        LazyLock::new(|| Regex::new(r"(?i)response[^a-z0-9\n]{0,6}").unwrap());
    pub static ACCEPT_RE: LazyLock<Regex> = LazyLock::new(|| {
        Regex::new(r"(?i)\b(yes|yeah|yep|sure|ok|okay|alright|of course|please|let's|love to|i'd like)\b").unwrap()
    });
    pub static DECLINE_RE: LazyLock<Regex> = LazyLock::new(|| {
        Regex::new(r"(?i)\b(no|nope|not|don't|rather not|later|stop|enough|tired|bye|goodbye)\b").unwrap()
    });
}

fn trim_separators(s: &str) -> &str {
    s.trim_matches(|c: char| c.is_whitespace() || matches!(c, ':' | ',' | '*' | '"' | '='))
}

pub fn parse_agent_decision(raw: &str) -> Result<AgentDecision, Unparseable> {
    let unparseable = || Unparseable {
        excerpt: raw.chars().take(80).collect(),
    };
    let option_match = OPTION_RE.captures(raw).ok_or_else(unparseable)?;
    let letter = option_match[1].chars().next().ok_or_else(unparseable)?;
    let option = AgentOption::from_letter(letter).ok_or_else(unparseable)?;
    let whole = option_match.get(0).expect("group 0 always present");

    let response = match RESPONSE_RE.find_at(raw, whole.end()) {
        Some(label) => &raw[label.end()..],
        None => match RESPONSE_RE.find(raw) {
            // Response label written before the option label.
            Some(label) if label.end() <= whole.start() => &raw[label.end()..whole.start()],
            _ => &raw[whole.end()..],
        },
    };
    let response = trim_separators(response);
    if response.is_empty() {
        return Err(unparseable());
    }
    Ok(AgentDecision::new(option, response))
}

/// Replaces a disallowed option by D, or E when D is not allowed either.
pub fn coerce_decision(
    decision: AgentDecision,
    allowed: OptionSet,
) -> (AgentDecision, Option<(AgentOption, AgentOption)>) {
    if allowed.contains(decision.option) {
        return (decision, None);
    }
    let replacement = if allowed.contains(AgentOption::D) {
        AgentOption::D
    } else {
        AgentOption::E
    };
    let requested = decision.option;
    (
        AgentDecision {
            option: replacement,
            ..decision
        },
        Some((requested, replacement)),
    )
}

/// What applying an option did to the session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type", content = "question")]
pub enum Effect {
    /// A or B: moved to the next question (none when the plan is finished).
    Advance(Option<QaKind>),
    /// C: stayed on the current question.
    Engage,
    /// D with a question still pending.
    Reask(QaKind),
    /// D with no question left.
    OfferNewPhoto,
    /// E.
    Farewell,
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("session has ended")]
    SessionEnded,
    #[error("session is not accepting chat replies in phase {0}")]
    NotActive(Phase),
    #[error("reply must not be empty")]
    EmptyReply,
    #[error("option {option} is not allowed here (allowed {allowed:?})")]
    OptionNotAllowed {
        option: AgentOption,
        allowed: OptionSet,
    },
    #[error("language model unavailable: {0}")]
    LlmUnavailable(#[source] LlmError),
    #[error("question generation failed: {0}")]
    QuestionGeneration(#[from] QaError),
}

fn check_active(state: &DialogueState) -> Result<(), EngineError> {
    match state.phase {
        Phase::Ended => Err(EngineError::SessionEnded),
        Phase::Structured | Phase::Open => Ok(()),
        other => Err(EngineError::NotActive(other)),
    }
}

/// Applies an already-allowed decision: updates the plan cursor, the
/// consecutive-C counter and the phase, then logs the chatbot turn.
pub fn apply_option(
    state: &DialogueState,
    decision: AgentDecision,
    policy: FlowPolicy,
) -> Result<(DialogueState, Effect), EngineError> {
    check_active(state)?;
    let allowed = policy.allowed_for(state);
    if !allowed.contains(decision.option) {
        return Err(EngineError::OptionNotAllowed {
            option: decision.option,
            allowed,
        });
    }

    let mut next = state.clone();
    let effect = match decision.option {
        AgentOption::A | AgentOption::B => {
            let plan = &mut next.plan;
            plan.items[plan.cursor].status = QaStatus::Done;
            plan.cursor += 1;
            next.consecutive_c = 0;
            let kind = plan.items.get_mut(plan.cursor).map(|item| {
                item.status = QaStatus::Asked;
                item.kind
            });
            if kind == Some(QaKind::Open) {
                next.phase = Phase::Open;
            }
            Effect::Advance(kind)
        }
        AgentOption::C => {
            next.consecutive_c += 1;
            Effect::Engage
        }
        AgentOption::D => {
            next.consecutive_c = 0;
            if next.plan.has_pending_structured() {
                let item = &mut next.plan.items[next.plan.cursor];
                item.status = QaStatus::Asked;
                Effect::Reask(item.kind)
            } else {
                next.phase = Phase::Summarizing;
                Effect::OfferNewPhoto
            }
        }
        AgentOption::E => {
            next.phase = Phase::Ended;
            Effect::Farewell
        }
    };

    let question_kind = match effect {
        Effect::Advance(kind) => kind,
        Effect::Reask(kind) => Some(kind),
        _ => None,
    };
    next.option_history.push(decision.option);
    next.turns.push(Turn {
        index: next.next_round(),
        role: Role::Chatbot,
        text: decision.response_text,
        option: Some(decision.option),
        question_kind,
    });
    debug_assert_eq!(next.consecutive_c, trailing_c_count(&next.option_history));
    Ok((next, effect))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub max_consecutive_c: u32,
    pub open_exchange_threshold: u32,
    pub chat_params: CompletionParams,
    pub structured_params: CompletionParams,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            max_consecutive_c: DEFAULT_MAX_CONSECUTIVE_C,
            open_exchange_threshold: DEFAULT_OPEN_EXCHANGE_THRESHOLD,
            chat_params: CompletionParams::CHAT,
            structured_params: CompletionParams::STRUCTURED,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: DialogueState,
    pub message: String,
    pub option: AgentOption,
    pub effect: Effect,
    pub coercion: Option<Coercion>,
    /// True when the agent's reply was unusable and a rule-based decision
    /// was substituted.
    pub fallback: bool,
}

pub struct DialogueEngine {
    prompts: PromptCatalog,
    config: EngineConfig,
}

impl Default for DialogueEngine {
    fn default() -> Self {
        Self::new(PromptCatalog::builtin(), EngineConfig::default())
    }
}

impl DialogueEngine {
    pub fn new(prompts: PromptCatalog, config: EngineConfig) -> Self {
        Self { prompts, config }
    }

    pub fn prompts(&self) -> &PromptCatalog {
        &self.prompts
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn policy(&self) -> FlowPolicy {
        FlowPolicy::new(self.config.max_consecutive_c)
    }

    /// Question plan for `photo`: stored pairs when the photo has them,
    /// otherwise freshly generated ones. Returns the pairs used.
    pub async fn prepare_plan(
        &self,
        user: &UserRecord,
        photo: &Photo,
        llm: &dyn LlmProvider,
    ) -> Result<(QuestionPlan, Vec<QaPair>), EngineError> {
        let pairs = if photo.qa_pairs.is_empty() {
            let prompt = qa::build_qa_prompt(&self.prompts, photo)?;
            let raw = llm
                .complete(&[ChatMessage::system(prompt)], self.config.structured_params)
                .await
                .map_err(EngineError::LlmUnavailable)?;
            qa::parse_qa_response(&raw)?.pairs
        } else {
            photo.qa_pairs.clone()
        };
        let plan = qa::assemble_question_plan(photo, &user.family, &pairs)?;
        Ok((plan, pairs))
    }

    /// Opens a session by asking the first planned question. The opening
    /// turn carries no option.
    pub fn start_session(
        &self,
        session_id: SessionId,
        user: &UserRecord,
        photo: &Photo,
        mut plan: QuestionPlan,
        now: Timestamp,
    ) -> DialogueState {
        plan.cursor = 0;
        let opening = plan.items.first_mut().map(|item| {
            item.status = QaStatus::Asked;
            (item.question.clone(), item.kind)
        });
        let mut state = DialogueState {
            session_id,
            user_id: user.user_id.clone(),
            photo_id: photo.photo_id.clone(),
            plan,
            option_history: Vec::new(),
            consecutive_c: 0,
            phase: Phase::Structured,
            open_exchanges: 0,
            turns: Vec::new(),
            coercions: Vec::new(),
            fallbacks: 0,
            summary_id: None,
            started_at: now,
        };
        if let Some((question, kind)) = opening {
            state.turns.push(Turn {
                index: 1,
                role: Role::Chatbot,
                text: question,
                option: None,
                question_kind: Some(kind),
            });
        }
        state
    }

    pub fn build_role_prompt(&self, user: &UserRecord, photo: &Photo) -> String {
        let profile = user.profile.to_string();
        self.prompts.role.render(&[
            ("background", user.background.trim()),
            ("profile", profile.as_str()),
            ("image_description", photo.description.trim()),
        ])
    }

    pub fn build_flow_prompt(
        &self,
        state: &DialogueState,
        user_reply: &str,
    ) -> Result<String, EngineError> {
        check_active(state)?;
        let allowed = self.policy().allowed_for(state);
        let plan = &state.plan;
        let current = plan.current().or_else(|| plan.items.last());
        let (question, answer) = match current {
            Some(item) if item.kind == QaKind::Open => (item.question.as_str(), OPEN_ENDED_ANSWER),
            Some(item) => (item.question.as_str(), item.expected_answer.as_str()),
            None => ("", ""),
        };
        let next = if plan.has_remaining() {
            plan.next_after_cursor()
                .map(|i| i.question.as_str())
                .unwrap_or(NO_NEXT_QUESTION)
        } else {
            NO_NEXT_QUESTION
        };
        let template = strip_action_lines(&self.prompts.flow.text, allowed);
        let options = allowed.slashed();
        Ok(crate::prompts::render(
            &template,
            &[
                ("q", question),
                ("a", answer),
                ("reply", user_reply.trim()),
                ("q_next", next),
                ("options", options.as_str()),
            ],
        ))
    }

    /// Role prompt followed by the transcript so far.
    pub fn conversation_messages(
        &self,
        state: &DialogueState,
        user: &UserRecord,
        photo: &Photo,
    ) -> Vec<ChatMessage> {
        let mut messages = Vec::with_capacity(state.turns.len() + 2);
        messages.push(ChatMessage::system(self.build_role_prompt(user, photo)));
        messages.extend(transcript_messages(state));
        messages
    }

    pub async fn step(
        &self,
        state: &DialogueState,
        user: &UserRecord,
        photo: &Photo,
        user_reply: &str,
        llm: &dyn LlmProvider,
    ) -> Result<StepOutcome, EngineError> {
        check_active(state)?;
        let reply = user_reply.trim();
        if reply.is_empty() {
            return Err(EngineError::EmptyReply);
        }
        let policy = self.policy();
        let allowed = policy.allowed_for(state);

        let mut messages = self.conversation_messages(state, user, photo);
        messages.push(ChatMessage::user(self.build_flow_prompt(state, reply)?));
        let raw = llm
            .complete(&messages, self.config.chat_params)
            .await
            .map_err(EngineError::LlmUnavailable)?;
        let parsed = match parse_agent_decision(&raw) {
            Ok(decision) => Some(decision),
            Err(err) => {
                warn!(session = %state.session_id, %err, "retrying with format reminder");
                if !raw.trim().is_empty() {
                    messages.push(ChatMessage::assistant(raw));
                }
                messages.push(ChatMessage::user(format_reminder(allowed)));
                let retry = llm
                    .complete(&messages, self.config.chat_params)
                    .await
                    .map_err(EngineError::LlmUnavailable)?;
                parse_agent_decision(&retry).ok()
            }
        };
        let fallback = parsed.is_none();
        let decision = parsed.unwrap_or_else(|| fallback_decision(state, allowed));

        let mut next = state.clone();
        next.turns.push(Turn {
            index: next.next_round(),
            role: Role::Elderly,
            text: reply.to_string(),
            option: None,
            question_kind: None,
        });
        if state.phase == Phase::Open {
            next.open_exchanges += 1;
        }
        if fallback {
            next.fallbacks += 1;
        }

        let (decision, coerced) = coerce_decision(decision, allowed);
        let coercion = coerced.map(|(requested, applied)| {
            warn!(session = %state.session_id, %requested, %applied, "coerced disallowed option");
            Coercion {
                round: next.next_round(),
                requested,
                applied,
            }
        });
        if let Some(c) = &coercion {
            next.coercions.push(c.clone());
        }

        let message = decision.response_text.clone();
        let option = decision.option;
        let (next, effect) = apply_option(&next, decision, policy)?;
        debug!(session = %next.session_id, %option, ?effect, "step applied");
        Ok(StepOutcome {
            state: next,
            message,
            option,
            effect,
            coercion,
            fallback,
        })
    }

    /// Records the elderly reply to a new-photo offer.
    pub fn record_offer_reply(
        &self,
        state: &DialogueState,
        reply: &str,
    ) -> Result<DialogueState, EngineError> {
        match state.phase {
            Phase::Summarizing => {}
            Phase::Ended => return Err(EngineError::SessionEnded),
            other => return Err(EngineError::NotActive(other)),
        }
        let reply = reply.trim();
        if reply.is_empty() {
            return Err(EngineError::EmptyReply);
        }
        let mut next = state.clone();
        next.turns.push(Turn {
            index: next.next_round(),
            role: Role::Elderly,
            text: reply.to_string(),
            option: None,
            question_kind: None,
        });
        Ok(next)
    }

    /// Caller-initiated close (end button, simulation limit, declined offer).
    pub fn end_session(&self, state: &DialogueState) -> DialogueState {
        let mut next = state.clone();
        next.phase = Phase::Ended;
        next
    }
}

/// Drops the action lines (`X: ...`) of options not in `allowed`.
fn strip_action_lines(template: &str, allowed: OptionSet) -> String {
    let mut out = String::with_capacity(template.len());
    for line in template.split_inclusive('\n') {
        let mut chars = line.trim_start().chars();
        let excluded = match (chars.next(), chars.next()) {
            (Some(letter), Some(':')) => AgentOption::from_letter(letter)
                .filter(|_| letter.is_ascii_uppercase())
                .is_some_and(|o| !allowed.contains(o)),
            _ => false,
        };
        if !excluded {
            out.push_str(line);
        }
    }
    out
}

fn format_reminder(allowed: OptionSet) -> String {
    format!(
        "Your previous reply did not follow the required format. Reply again using exactly: option:<one of {}>, response: <your message to the elder>",
        allowed.slashed()
    )
}

fn fallback_decision(state: &DialogueState, allowed: OptionSet) -> AgentDecision {
    let plan = &state.plan;
    if plan.has_pending_structured() {
        let question = &plan.items[plan.cursor].question;
        let option = if allowed.contains(AgentOption::D) {
            AgentOption::D
        } else {
            AgentOption::C
        };
        return AgentDecision::new(option, format!("{REASK_PREFIX} {question}"));
    }
    if allowed.contains(AgentOption::C) {
        AgentDecision::new(AgentOption::C, qa::OPEN_QUESTION)
    } else {
        AgentDecision::new(AgentOption::D, OFFER_TEXT)
    }
}

/// Transcript as chat messages from the chatbot's side.
pub fn transcript_messages(state: &DialogueState) -> Vec<ChatMessage> {
    state
        .turns
        .iter()
        .map(|t| match t.role {
            Role::Chatbot => ChatMessage::assistant(t.text.clone()),
            Role::Elderly => ChatMessage::user(t.text.clone()),
        })
        .collect()
}

/// Question kinds in the order the chatbot asked them, consecutive repeats
/// collapsed.
pub fn question_progression(state: &DialogueState) -> Vec<QaKind> {
    let mut out: Vec<QaKind> = Vec::new();
    for kind in state.turns.iter().filter_map(|t| t.question_kind) {
        if out.last() != Some(&kind) {
            out.push(kind);
        }
    }
    out
}

/// One transcript line in the grid shown to caregivers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptRow {
    pub round: u32,
    pub role: Role,
    pub question_kind: Option<QaKind>,
    pub option: Option<AgentOption>,
    pub message: String,
}

pub fn transcript_rows(state: &DialogueState) -> Vec<TranscriptRow> {
    state
        .turns
        .iter()
        .map(|t| TranscriptRow {
            round: t.index,
            role: t.role,
            question_kind: t.question_kind,
            option: t.option,
            message: t.text.clone(),
        })
        .collect()
}

/// Reads an elderly reply to the new-photo offer as yes or no. Anything
/// without a clear yes counts as no, so an unclear reply closes the chat
/// rather than pushing another photo.
pub fn accepts_offer(reply: &str) -> bool {
    use patterns::{ACCEPT_RE, DECLINE_RE};
    !DECLINE_RE.is_match(reply) && ACCEPT_RE.is_match(reply)
}
