use reminisce_core::dialogue::{accepts_offer, transcript_messages, DialogueEngine, Effect};
use reminisce_core::domain::{DialogueState, Photo, SessionId, Timestamp, UserRecord};
use reminisce_core::llm::{persona_reply, LlmProvider, PersonaConfig};
use reminisce_core::photo_policy::{mark_discussed, select_next_photo};
use reminisce_core::summary::{apply_summary, should_summarize, summarize_session};
use reminisce_core::{ChatSummary, Role};
use serde::{Deserialize, Serialize};
use tracing::info;

use crate::report::{SessionReport, SimulationReport};
use crate::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimParams {
    /// Upper bound on engine steps across the whole simulation.
    pub max_rounds: u32,
    /// Clock value stamped on sessions and summaries. Fixed so that reports
    /// are reproducible.
    pub now: Timestamp,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            max_rounds: PersonaConfig::default().max_rounds,
            now: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndReason {
    Farewell,
    OfferAccepted,
    OfferDeclined,
    MaxRounds,
}

/// Alternates persona replies and engine steps over one or more photos.
///
/// A session ends on farewell, on the reply to a new-photo offer, or when
/// the step budget runs out. An accepted offer moves on to the next photo
/// the selection policy picks from the photos not yet discussed here.
#[allow(clippy::too_many_arguments)]
pub async fn run_simulation(
    engine: &DialogueEngine,
    user: &UserRecord,
    photos: &[Photo],
    persona: &PersonaConfig,
    chatbot: &dyn LlmProvider,
    persona_llm: &dyn LlmProvider,
    params: SimParams,
) -> Result<SimulationReport, SimError> {
    if params.max_rounds == 0 {
        return Err(SimError::FixtureInvalid("max_rounds must be at least 1".into()));
    }
    if photos.is_empty() {
        return Err(SimError::FixtureInvalid("no photos to discuss".into()));
    }
    for photo in photos {
        if photo.owner != user.user_id {
            return Err(SimError::FixtureInvalid(format!(
                "photo {} belongs to {}, not {}",
                photo.photo_id, photo.owner, user.user_id
            )));
        }
        photo
            .validate(user)
            .map_err(|e| SimError::FixtureInvalid(format!("photo {}: {e}", photo.photo_id)))?;
    }

    let profile_before = user.profile.clone();
    let mut user = user.clone();
    let mut pool = photos.to_vec();
    let mut sessions = Vec::new();
    let mut target: Option<String> = None;
    let mut steps = 0u32;

    loop {
        let chosen = select_next_photo(&pool, target.as_deref())
            .expect("pool is non-empty")
            .clone();
        pool.retain(|p| p.photo_id != chosen.photo_id);
        let number = sessions.len() + 1;
        let now = params.now + number as Timestamp - 1;

        let (plan, pairs) = engine.prepare_plan(&user, &chosen, chatbot).await?;
        let mut photo = mark_discussed(&chosen, now);
        photo.qa_pairs = pairs;
        let session_id = SessionId::new(format!("sim-{number}"));
        let mut state = engine.start_session(session_id, &user, &photo, plan, now);

        let mut summary: Option<ChatSummary> = None;
        let mut terminal_effect = None;
        let end_reason = loop {
            if steps >= params.max_rounds {
                state = engine.end_session(&state);
                break EndReason::MaxRounds;
            }
            let reply = persona_reply(persona, &transcript_messages(&state), persona_llm).await?;
            let outcome = engine.step(&state, &user, &photo, &reply, chatbot).await?;
            steps += 1;
            state = outcome.state;
            terminal_effect = Some(outcome.effect);
            if summary.is_none() && should_summarize(&state, engine.config().open_exchange_threshold) {
                summary = Some(summarize(engine, &user, &mut state, chatbot, now).await?);
            }
            match outcome.effect {
                Effect::Farewell => break EndReason::Farewell,
                Effect::OfferNewPhoto => {
                    let answer =
                        persona_reply(persona, &transcript_messages(&state), persona_llm).await?;
                    state = engine.record_offer_reply(&state, &answer)?;
                    state = engine.end_session(&state);
                    break if accepts_offer(&answer) {
                        EndReason::OfferAccepted
                    } else {
                        EndReason::OfferDeclined
                    };
                }
                _ => {}
            }
        };

        let has_elderly = state.turns.iter().any(|t| t.role == Role::Elderly);
        if summary.is_none() && has_elderly {
            summary = Some(summarize(engine, &user, &mut state, chatbot, now).await?);
        }
        if let Some(s) = &summary {
            user = apply_summary(&user, s);
            if s.target_person.is_some() {
                target = s.target_person.clone();
            }
        }
        info!(session = %state.session_id, ?end_reason, steps, "session finished");
        sessions.push(SessionReport::new(
            &state,
            engine.policy(),
            terminal_effect,
            end_reason,
            summary,
        ));

        if end_reason != EndReason::OfferAccepted || pool.is_empty() || steps >= params.max_rounds {
            break;
        }
    }

    Ok(SimulationReport::new(sessions, steps, &profile_before, &user.profile))
}

async fn summarize(
    engine: &DialogueEngine,
    user: &UserRecord,
    state: &mut DialogueState,
    llm: &dyn LlmProvider,
    now: Timestamp,
) -> Result<ChatSummary, SimError> {
    let id = format!("{}-summary", state.session_id);
    let summary = summarize_session(engine, user, state, llm, id, now).await?;
    state.summary_id = Some(summary.summary_id.clone());
    Ok(summary)
}
