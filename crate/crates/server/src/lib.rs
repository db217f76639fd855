//! HTTP API over the reminiscence engine.
//!
//! All state lives in the file-backed [`Store`]; a handler loads what it
//! needs, runs the engine and writes the result back before replying. A
//! restarted process therefore resumes every session from its last
//! snapshot. Requests for one session are serialized by a per-session lock.

mod error;
mod photos;
mod sessions;
mod users;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::{DefaultBodyLimit, Request, State};
use axum::http::header::AUTHORIZATION;
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use reminisce_core::dialogue::{DialogueEngine, EngineConfig};
use reminisce_core::domain::Timestamp;
use reminisce_core::llm::{LlmProvider, RemoteConfig, RemoteProvider, ScriptedProvider};
use reminisce_core::prompts::PromptCatalog;
use reminisce_core::store::Store;
use serde_json::json;

pub use error::ApiError;

const MAX_UPLOAD_BYTES: usize = 25 * 1024 * 1024;

pub type Clock = Arc<dyn Fn() -> Timestamp + Send + Sync>;

pub fn system_clock() -> Clock {
    Arc::new(|| {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs() as Timestamp)
            .unwrap_or(0)
    })
}

/// Shared handler state. Cloning is cheap.
#[derive(Clone)]
pub struct AppState {
    pub store: Arc<Store>,
    pub engine: Arc<DialogueEngine>,
    pub llm: Arc<dyn LlmProvider>,
    pub api_token: Option<String>,
    pub clock: Clock,
    session_locks: Arc<Mutex<HashMap<String, Arc<tokio::sync::Mutex<()>>>>>,
}

impl AppState {
    pub fn new(store: Store, engine: DialogueEngine, llm: Arc<dyn LlmProvider>) -> Self {
        Self {
            store: Arc::new(store),
            engine: Arc::new(engine),
            llm,
            api_token: None,
            clock: system_clock(),
            session_locks: Arc::default(),
        }
    }

    pub fn with_token(mut self, token: impl Into<String>) -> Self {
        self.api_token = Some(token.into());
        self
    }

    pub fn with_clock(mut self, clock: Clock) -> Self {
        self.clock = clock;
        self
    }

    pub(crate) fn now(&self) -> Timestamp {
        (self.clock)()
    }

    pub(crate) fn session_lock(&self, id: &str) -> Arc<tokio::sync::Mutex<()>> {
        let mut locks = self.session_locks.lock().unwrap_or_else(|e| e.into_inner());
        locks.entry(id.to_string()).or_default().clone()
    }
}

pub(crate) fn new_id(prefix: &str) -> String {
    format!("{prefix}-{}", uuid::Uuid::new_v4().simple())
}

async fn require_token(State(state): State<AppState>, request: Request, next: Next) -> Response {
    if let Some(expected) = &state.api_token {
        let presented = request
            .headers()
            .get(AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if presented != Some(expected.as_str()) {
            return ApiError::Unauthorized.into_response();
        }
    }
    next.run(request).await
}

async fn health() -> Json<serde_json::Value> {
    Json(json!({ "status": "ok" }))
}

pub fn router(state: AppState) -> Router {
    let api = Router::new()
        .route("/users", post(users::create_user))
        .route("/users/{id}", get(users::get_user))
        .route(
            "/users/{id}/photos",
            post(photos::upload_photo).get(photos::list_photos),
        )
        .route("/users/{id}/imports/messages", post(photos::import_messages))
        .route("/users/{id}/sessions", post(sessions::start_session))
        .route("/users/{id}/summaries", get(users::list_summaries))
        .route("/photos/{id}", get(photos::get_photo))
        .route("/photos/{id}/image", get(photos::get_image))
        .route("/sessions/{id}", get(sessions::get_session))
        .route("/sessions/{id}/messages", post(sessions::post_message))
        .route("/sessions/{id}/end", post(sessions::end_session))
        .layer(middleware::from_fn_with_state(state.clone(), require_token))
        .route("/health", get(health))
        .layer(DefaultBodyLimit::max(MAX_UPLOAD_BYTES));
    Router::new().nest("/api", api).with_state(state)
}

/// Process configuration read from the environment.
#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub listen_addr: SocketAddr,
    pub data_dir: PathBuf,
    pub api_token: Option<String>,
    pub prompt_dir: Option<PathBuf>,
    /// `remote` or `scripted:<path>`.
    pub chat_provider: String,
}

impl ServerConfig {
    /// LISTEN_ADDR, DATA_DIR, API_TOKEN, PROMPT_DIR and CHAT_PROVIDER.
    pub fn from_env() -> Result<Self, String> {
        let var = |k: &str| std::env::var(k).ok().filter(|v| !v.trim().is_empty());
        let listen_addr = var("LISTEN_ADDR")
            .unwrap_or_else(|| "127.0.0.1:8080".into())
            .parse()
            .map_err(|e| format!("LISTEN_ADDR: {e}"))?;
        Ok(Self {
            listen_addr,
            data_dir: var("DATA_DIR").unwrap_or_else(|| "./data".into()).into(),
            api_token: var("API_TOKEN"),
            prompt_dir: var("PROMPT_DIR").map(PathBuf::from),
            chat_provider: var("CHAT_PROVIDER").unwrap_or_else(|| "remote".into()),
        })
    }

    pub fn build_state(&self) -> Result<AppState, String> {
        let store = Store::open(&self.data_dir).map_err(|e| e.to_string())?;
        let prompts = match &self.prompt_dir {
            Some(dir) => PromptCatalog::load_dir(dir).map_err(|e| e.to_string())?,
            None => PromptCatalog::builtin(),
        };
        let llm: Arc<dyn LlmProvider> = match self.chat_provider.strip_prefix("scripted:") {
            Some(path) => Arc::new(ScriptedProvider::from_file(path).map_err(|e| format!("{path}: {e}"))?),
            None if self.chat_provider == "remote" => {
                Arc::new(RemoteProvider::new(RemoteConfig::from_env()?).map_err(|e| e.to_string())?)
            }
            None => return Err(format!("unknown CHAT_PROVIDER `{}`", self.chat_provider)),
        };
        let mut state = AppState::new(store, DialogueEngine::new(prompts, EngineConfig::default()), llm);
        state.api_token = self.api_token.clone();
        Ok(state)
    }
}
