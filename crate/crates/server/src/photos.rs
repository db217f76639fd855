use axum::extract::{Multipart, Path, State};
use axum::http::{header, StatusCode};
use axum::response::IntoResponse;
use axum::Json;
use reminisce_core::domain::{names_match, Photo, Timestamp, TopicSource, UserRecord};
use reminisce_core::face::{identify_members, CaregiverTags, CosineMatcher, FaceError, FaceInput};
use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::{new_id, ApiError, AppState};

/// A photo as returned to clients.
#[derive(Debug, Serialize)]
pub struct PhotoView {
    #[serde(flatten)]
    pub photo: Photo,
    pub image_url: Option<String>,
}

impl PhotoView {
    pub fn new(photo: Photo, state: &AppState) -> Self {
        let has_image = photo.source == TopicSource::Photo
            && state.store.get_blob(photo.photo_id.as_str()).is_ok();
        let image_url = has_image.then(|| format!("/api/photos/{}/image", photo.photo_id));
        Self { photo, image_url }
    }
}

/// Roster names for a new photo: caregiver tags plus any embedding matches.
fn resolve_members(user: &UserRecord, input: &FaceInput) -> Result<Vec<String>, ApiError> {
    for tag in &input.tags {
        if user.member(tag).is_none() {
            warn!(tag, "ignoring tag that is not in the family roster");
        }
    }
    let mut names: Vec<String> = identify_members(input, &user.family, &CaregiverTags)
        .map_err(|e| ApiError::Validation(e.to_string()))?
        .into_iter()
        .map(|m| m.name)
        .collect();
    if !input.embeddings.is_empty() {
        match identify_members(input, &user.family, &CosineMatcher::default()) {
            Ok(matches) => {
                for m in matches {
                    if !names.iter().any(|n| names_match(n, &m.name)) {
                        names.push(m.name);
                    }
                }
            }
            Err(FaceError::MatcherUnavailable(why)) => warn!(%why, "face matching skipped"),
            Err(e) => return Err(ApiError::Validation(e.to_string())),
        }
    }
    Ok(names)
}

fn store_photo(state: &AppState, user: &UserRecord, photo: &Photo) -> Result<(), ApiError> {
    photo
        .validate(user)
        .map_err(|e| ApiError::Validation(e.to_string()))?;
    state.store.insert(photo)?;
    Ok(())
}

pub async fn upload_photo(
    State(state): State<AppState>,
    Path(user_id): Path<String>,
    mut form: Multipart,
) -> Result<(StatusCode, Json<PhotoView>), ApiError> {
    let user = state.store.get::<UserRecord>(&user_id)?.record;
    let bad = |e: axum::extract::multipart::MultipartError| ApiError::Validation(e.body_text());

    let mut image: Option<Vec<u8>> = None;
    let mut description = String::new();
    let mut uploaded_at: Option<Timestamp> = None;
    let mut input = FaceInput::default();
    while let Some(field) = form.next_field().await.map_err(bad)? {
        let name = field.name().unwrap_or_default().to_string();
        match name.as_str() {
            "image" => image = Some(field.bytes().await.map_err(bad)?.to_vec()),
            "description" => description = field.text().await.map_err(bad)?,
            "members" => {
                let text = field.text().await.map_err(bad)?;
                input.tags.extend(
                    text.split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(String::from),
                );
            }
            "embeddings" => {
                let text = field.text().await.map_err(bad)?;
                input.embeddings = serde_json::from_str(&text)
                    .map_err(|e| ApiError::Validation(format!("embeddings: {e}")))?;
            }
            "uploaded_at" => {
                let text = field.text().await.map_err(bad)?;
                uploaded_at = Some(
                    text.trim()
                        .parse()
                        .map_err(|_| ApiError::Validation("uploaded_at must be epoch seconds".into()))?,
                );
            }
            other => warn!(field = other, "ignoring unknown form field"),
        }
    }
    let image = image
        .filter(|b| !b.is_empty())
        .ok_or_else(|| ApiError::Validation("image file is required".into()))?;
    let description = description.trim().to_string();
    if description.is_empty() {
        return Err(ApiError::Validation("description is required".into()));
    }

    let members = resolve_members(&user, &input)?;
    let photo = Photo::new(
        new_id("photo"),
        user.user_id.clone(),
        uploaded_at.unwrap_or_else(|| state.now()),
        description,
    )
    .with_members(members);
    store_photo(&state, &user, &photo)?;
    state.store.put_blob(photo.photo_id.as_str(), &image)?;
    Ok((StatusCode::CREATED, Json(PhotoView::new(photo, &state))))
}

#[derive(Debug, Deserialize)]
pub struct MessageImport {
    /// The imported conversation, or a caregiver's summary of it.
    pub text: String,
    #[serde(default)]
    pub members: Vec<String>,
    #[serde(default)]
    pub imported_at: Option<Timestamp>,
}

pub async fn import_messages(
    State(state): State<AppState>,
    Path(user_id): Path<String>,
    Json(body): Json<MessageImport>,
) -> Result<(StatusCode, Json<PhotoView>), ApiError> {
    let user = state.store.get::<UserRecord>(&user_id)?.record;
    let text = body.text.trim();
    if text.is_empty() {
        return Err(ApiError::Validation("text is required".into()));
    }
    let input = FaceInput {
        tags: body.members,
        ..Default::default()
    };
    let mut topic = Photo::new(
        new_id("import"),
        user.user_id.clone(),
        body.imported_at.unwrap_or_else(|| state.now()),
        text,
    )
    .with_members(resolve_members(&user, &input)?);
    topic.source = TopicSource::MessageImport;
    store_photo(&state, &user, &topic)?;
    Ok((StatusCode::CREATED, Json(PhotoView::new(topic, &state))))
}

pub async fn list_photos(
    State(state): State<AppState>,
    Path(user_id): Path<String>,
) -> Result<Json<Vec<PhotoView>>, ApiError> {
    state.store.get::<UserRecord>(&user_id)?;
    let photos = state.store.photos_for(&user_id, None)?;
    Ok(Json(
        photos
            .into_iter()
            .map(|p| PhotoView::new(p.record, &state))
            .collect(),
    ))
}

pub async fn get_photo(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<PhotoView>, ApiError> {
    let photo = state.store.get::<Photo>(&id)?.record;
    Ok(Json(PhotoView::new(photo, &state)))
}

pub async fn get_image(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<impl IntoResponse, ApiError> {
    let bytes = state.store.get_blob(&id)?;
    Ok(([(header::CONTENT_TYPE, sniff_image_type(&bytes))], bytes))
}

fn sniff_image_type(bytes: &[u8]) -> &'static str {
    match bytes {
        [0x89, b'P', b'N', b'G', ..] => "image/png",
        [0xFF, 0xD8, 0xFF, ..] => "image/jpeg",
        [b'G', b'I', b'F', b'8', ..] => "image/gif",
        [b'R', b'I', b'F', b'F', _, _, _, _, b'W', b'E', b'B', b'P', ..] => "image/webp",
        _ => "application/octet-stream",
    }
}
