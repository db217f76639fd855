use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::Json;
use reminisce_core::domain::{validate_user, ChatSummary, FamilyMember, Profile, UserId, UserRecord};
use serde::Deserialize;

use crate::{new_id, ApiError, AppState};

#[derive(Debug, Deserialize)]
pub struct NewUser {
    pub display_name: String,
    #[serde(default)]
    pub background: String,
    #[serde(default)]
    pub profile: Profile,
    #[serde(default)]
    pub family: Vec<FamilyMember>,
}

pub async fn create_user(
    State(state): State<AppState>,
    Json(body): Json<NewUser>,
) -> Result<(StatusCode, Json<UserRecord>), ApiError> {
    let record = validate_user(UserRecord {
        user_id: UserId::new(new_id("user")),
        display_name: body.display_name,
        background: body.background,
        profile: body.profile.normalized(),
        family: body.family,
    })
    .map_err(|e| ApiError::Validation(e.to_string()))?;
    state.store.insert(&record)?;
    Ok((StatusCode::CREATED, Json(record)))
}

pub async fn get_user(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<UserRecord>, ApiError> {
    Ok(Json(state.store.get::<UserRecord>(&id)?.record))
}

pub async fn list_summaries(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<Vec<ChatSummary>>, ApiError> {
    state.store.get::<UserRecord>(&id)?;
    Ok(Json(state.store.summaries_for(&id)?))
}
