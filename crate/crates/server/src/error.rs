use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use reminisce_core::dialogue::EngineError;
use reminisce_core::store::StoreError;
use reminisce_core::summary::SummaryError;
use serde::Serialize;
use thiserror::Error;
use tracing::error;

#[derive(Debug, Error)]
pub enum ApiError {
    #[error("{0}")]
    Validation(String),
    #[error("missing or invalid bearer token")]
    Unauthorized,
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("session has ended")]
    SessionEnded,
    #[error("language model unavailable: {0}")]
    LlmUnavailable(String),
    #[error("storage error: {0}")]
    Storage(String),
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: &'a str,
    message: String,
}

impl ApiError {
    pub fn code(&self) -> &'static str {
        match self {
            ApiError::Validation(_) => "VALIDATION",
            ApiError::Unauthorized => "UNAUTHORIZED",
            ApiError::NotFound(_) => "NOT_FOUND",
            ApiError::Conflict(_) => "VERSION_CONFLICT",
            ApiError::SessionEnded => "SESSION_ENDED",
            ApiError::LlmUnavailable(_) => "LLM_UNAVAILABLE",
            ApiError::Storage(_) => "STORAGE_IO",
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            ApiError::Validation(_) => StatusCode::BAD_REQUEST,
            ApiError::Unauthorized => StatusCode::UNAUTHORIZED,
            ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::Conflict(_) => StatusCode::CONFLICT,
            ApiError::SessionEnded => StatusCode::GONE,
            ApiError::LlmUnavailable(_) => StatusCode::BAD_GATEWAY,
            ApiError::Storage(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if let ApiError::Storage(msg) = &self {
            error!(%msg, "storage failure");
        }
        let body = ErrorBody {
            error: self.code(),
            message: self.to_string(),
        };
        (self.status(), Json(body)).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::NotFound { .. } | StoreError::InvalidId(_) => ApiError::NotFound(e.to_string()),
            StoreError::VersionConflict { .. } => ApiError::Conflict(e.to_string()),
            other => ApiError::Storage(other.to_string()),
        }
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::SessionEnded => ApiError::SessionEnded,
            EngineError::EmptyReply => ApiError::Validation(e.to_string()),
            EngineError::NotActive(_) | EngineError::OptionNotAllowed { .. } => ApiError::Conflict(e.to_string()),
            EngineError::LlmUnavailable(_) | EngineError::QuestionGeneration(_) => {
                ApiError::LlmUnavailable(e.to_string())
            }
        }
    }
}

impl From<SummaryError> for ApiError {
    fn from(e: SummaryError) -> Self {
        match e {
            SummaryError::EmptyChat => ApiError::Validation(e.to_string()),
            _ => ApiError::LlmUnavailable(e.to_string()),
        }
    }
}
