use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::Json;
use reminisce_core::dialogue::{accepts_offer, question_progression, transcript_rows, Effect, TranscriptRow};
use reminisce_core::domain::{
    AgentOption, ChatSummary, DialogueState, Phase, Photo, QaKind, Role, SessionId, UserRecord,
};
use reminisce_core::photo_policy::{mark_discussed, select_next_photo};
use reminisce_core::store::StoreError;
use reminisce_core::summary::{apply_summary, should_summarize, summarize_session};
use serde::{Deserialize, Serialize};
use tracing::{info, warn};

use crate::photos::PhotoView;
use crate::{new_id, ApiError, AppState};

const USER_UPDATE_ATTEMPTS: usize = 3;

#[derive(Debug, Default, Deserialize)]
pub struct StartSession {
    #[serde(default)]
    pub photo_id: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct SessionStarted {
    pub session_id: String,
    pub photo: PhotoView,
    pub round: u32,
    pub message: String,
    pub question_kind: Option<QaKind>,
    pub phase: Phase,
}

fn latest_target(state: &AppState, user_id: &str) -> Result<Option<String>, ApiError> {
    Ok(state
        .store
        .summaries_for(user_id)?
        .into_iter()
        .rev()
        .find_map(|s| s.target_person))
}

pub async fn start_session(
    State(app): State<AppState>,
    Path(user_id): Path<String>,
    body: Option<Json<StartSession>>,
) -> Result<(StatusCode, Json<SessionStarted>), ApiError> {
    let user = app.store.get::<UserRecord>(&user_id)?.record;
    let request = body.map(|Json(b)| b).unwrap_or_default();
    let chosen = match request.photo_id {
        Some(id) => {
            let photo = app.store.get::<Photo>(&id)?;
            if photo.record.owner != user.user_id {
                return Err(ApiError::NotFound(format!("photos {id} not found")));
            }
            photo
        }
        None => {
            let photos = app.store.photos_for(&user_id, None)?;
            let target = latest_target(&app, &user_id)?;
            let records: Vec<Photo> = photos.iter().map(|p| p.record.clone()).collect();
            let pick = select_next_photo(&records, target.as_deref())
                .map_err(|_| ApiError::NotFound(format!("user {user_id} has no photos")))?;
            photos
                .into_iter()
                .find(|p| p.record.photo_id == pick.photo_id)
                .expect("picked from this list")
        }
    };

    let (plan, pairs) = app.engine.prepare_plan(&user, &chosen.record, app.llm.as_ref()).await?;
    let now = app.now();
    let mut photo = mark_discussed(&chosen.record, now);
    photo.qa_pairs = pairs;
    app.store.update(&photo, chosen.version)?;

    let session_id = SessionId::new(new_id("session"));
    let state = app.engine.start_session(session_id, &user, &photo, plan, now);
    app.store.insert(&state)?;
    info!(session = %state.session_id, photo = %photo.photo_id, "session started");

    let opening = state.turns.last();
    Ok((
        StatusCode::CREATED,
        Json(SessionStarted {
            session_id: state.session_id.to_string(),
            round: opening.map_or(0, |t| t.index),
            message: opening.map(|t| t.text.clone()).unwrap_or_default(),
            question_kind: opening.and_then(|t| t.question_kind),
            phase: state.phase,
            photo: PhotoView::new(photo, &app),
        }),
    ))
}

#[derive(Debug, Deserialize)]
pub struct UserMessage {
    pub text: String,
}

#[derive(Debug, Serialize)]
pub struct MessageReply {
    pub session_id: String,
    /// Round of the last transcript row this request added.
    pub round: u32,
    pub message: Option<String>,
    pub option: Option<AgentOption>,
    pub effect: Option<Effect>,
    pub question_kind: Option<QaKind>,
    pub phase: Phase,
    pub proposed_photo: Option<PhotoView>,
    pub offer_accepted: Option<bool>,
    pub summary: Option<ChatSummary>,
}

/// Writes the summary, folds it into the user profile and links it to the
/// session snapshot stored at `version`.
async fn summarize_and_store(
    app: &AppState,
    user: &UserRecord,
    session: &mut DialogueState,
    version: u64,
) -> Result<ChatSummary, ApiError> {
    let id = new_id("summary");
    let summary =
        summarize_session(&app.engine, user, session, app.llm.as_ref(), id, app.now()).await?;
    app.store.insert(&summary)?;

    let user_id = user.user_id.as_str();
    for attempt in 1..=USER_UPDATE_ATTEMPTS {
        let current = app.store.get::<UserRecord>(user_id)?;
        match app.store.update(&apply_summary(&current.record, &summary), current.version) {
            Ok(_) => break,
            Err(StoreError::VersionConflict { .. }) if attempt < USER_UPDATE_ATTEMPTS => continue,
            Err(e) => return Err(e.into()),
        }
    }

    session.summary_id = Some(summary.summary_id.clone());
    app.store.update(&*session, version)?;
    Ok(summary)
}

/// Next photo to offer: the policy's pick among the user's other photos.
fn propose_next(
    app: &AppState,
    session: &DialogueState,
    target: Option<String>,
) -> Result<Option<PhotoView>, ApiError> {
    let user_id = session.user_id.as_str();
    let target = match target {
        Some(t) => Some(t),
        None => latest_target(app, user_id)?,
    };
    let others: Vec<Photo> = app
        .store
        .photos_for(user_id, None)?
        .into_iter()
        .map(|p| p.record)
        .filter(|p| p.photo_id != session.photo_id)
        .collect();
    Ok(select_next_photo(&others, target.as_deref())
        .ok()
        .map(|p| PhotoView::new(p.clone(), app)))
}

pub async fn post_message(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Json(body): Json<UserMessage>,
) -> Result<Json<MessageReply>, ApiError> {
    let lock = app.session_lock(&id);
    let _guard = lock.lock().await;
    let stored = app.store.get::<DialogueState>(&id)?;
    let session = stored.record;

    match session.phase {
        Phase::Ended => Err(ApiError::SessionEnded),
        Phase::Summarizing => {
            let accepted = accepts_offer(&body.text);
            let replied = app.engine.record_offer_reply(&session, &body.text)?;
            let mut ended = app.engine.end_session(&replied);
            let version = app.store.update(&ended, stored.version)?;
            let mut summary = None;
            if ended.summary_id.is_none() {
                let user = app.store.get::<UserRecord>(ended.user_id.as_str())?.record;
                match summarize_and_store(&app, &user, &mut ended, version).await {
                    Ok(s) => summary = Some(s),
                    Err(e) => warn!(session = %id, error = %e, "summary deferred"),
                }
            }
            let target = summary.as_ref().and_then(|s| s.target_person.clone());
            let proposed = if accepted { propose_next(&app, &ended, target)? } else { None };
            Ok(Json(MessageReply {
                session_id: id,
                round: ended.turns.last().map_or(0, |t| t.index),
                message: None,
                option: None,
                effect: None,
                question_kind: None,
                phase: ended.phase,
                proposed_photo: proposed,
                offer_accepted: Some(accepted),
                summary,
            }))
        }
        Phase::Structured | Phase::Open => {
            let user = app.store.get::<UserRecord>(session.user_id.as_str())?.record;
            let photo = app.store.get::<Photo>(session.photo_id.as_str())?.record;
            let outcome = app
                .engine
                .step(&session, &user, &photo, &body.text, app.llm.as_ref())
                .await?;
            let mut next = outcome.state;
            let version = app.store.update(&next, stored.version)?;

            let mut summary = None;
            let threshold = app.engine.config().open_exchange_threshold;
            if next.summary_id.is_none() && should_summarize(&next, threshold) {
                match summarize_and_store(&app, &user, &mut next, version).await {
                    Ok(s) => summary = Some(s),
                    Err(e) => warn!(session = %id, error = %e, "summary deferred"),
                }
            }
            let proposed = if outcome.effect == Effect::OfferNewPhoto {
                let target = summary.as_ref().and_then(|s| s.target_person.clone());
                propose_next(&app, &next, target)?
            } else {
                None
            };
            let last = next.turns.last();
            Ok(Json(MessageReply {
                session_id: id,
                round: last.map_or(0, |t| t.index),
                question_kind: last.and_then(|t| t.question_kind),
                message: Some(outcome.message),
                option: Some(outcome.option),
                effect: Some(outcome.effect),
                phase: next.phase,
                proposed_photo: proposed,
                offer_accepted: None,
                summary,
            }))
        }
    }
}

#[derive(Debug, Serialize)]
pub struct SessionEnded {
    pub session_id: String,
    pub phase: Phase,
    pub summary: Option<ChatSummary>,
}

/// Closes the session and produces its summary if it has none yet. Ending
/// an already ended session returns its summary again.
pub async fn end_session(
    State(app): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<SessionEnded>, ApiError> {
    let lock = app.session_lock(&id);
    let _guard = lock.lock().await;
    let stored = app.store.get::<DialogueState>(&id)?;
    let mut session = app.engine.end_session(&stored.record);

    let was_ended = stored.record.phase == Phase::Ended;
    let has_chat = session.turns.iter().any(|t| t.role == Role::Elderly);
    let summary = match session.summary_id.clone() {
        None if has_chat => {
            let user = app.store.get::<UserRecord>(session.user_id.as_str())?.record;
            // Summarizing also persists the ended snapshot, so an LLM failure
            // leaves the session as it was.
            Some(summarize_and_store(&app, &user, &mut session, stored.version).await?)
        }
        existing => {
            if !was_ended {
                app.store.update(&session, stored.version)?;
            }
            match existing {
                Some(sid) => Some(app.store.get::<ChatSummary>(&sid)?.record),
                None => None,
            }
        }
    };
    Ok(Json(SessionEnded {
        session_id: id,
        phase: session.phase,
        summary,
    }))
}

#[derive(Debug, Serialize)]
pub struct SessionView {
    pub session_id: String,
    pub user_id: String,
    pub photo_id: String,
    pub phase: Phase,
    pub version: u64,
    pub started_at: i64,
    pub option_history: Vec<AgentOption>,
    pub question_progression: Vec<QaKind>,
    pub consecutive_c: u32,
    pub summary_id: Option<String>,
    pub transcript: Vec<TranscriptRow>,
}

pub async fn get_session(
    State(app): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<SessionView>, ApiError> {
    let stored = app.store.get::<DialogueState>(&id)?;
    let s = stored.record;
    Ok(Json(SessionView {
        session_id: s.session_id.to_string(),
        user_id: s.user_id.to_string(),
        photo_id: s.photo_id.to_string(),
        phase: s.phase,
        version: stored.version,
        started_at: s.started_at,
        question_progression: question_progression(&s),
        transcript: transcript_rows(&s),
        option_history: s.option_history,
        consecutive_c: s.consecutive_c,
        summary_id: s.summary_id,
    }))
}
