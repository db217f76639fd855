//! Simulation harness: drives the dialogue engine against a persona (or a
//! scripted elderly speaker) and reports the transcript and flow metrics.

pub mod report;
pub mod simulate;

use std::fs;
use std::path::Path;
use std::sync::Arc;

use reminisce_core::domain::{validate_user, Photo, UserRecord};
use reminisce_core::llm::{LlmError, LlmProvider, PersonaConfig, RemoteConfig, RemoteProvider, ScriptedProvider};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use thiserror::Error;

pub use report::{emit_report, ReportFormat, SessionReport, SimulationReport};
pub use simulate::{run_simulation, EndReason, SimParams};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid fixture: {0}")]
    FixtureInvalid(String),
    #[error("provider error: {0}")]
    Provider(#[from] LlmError),
    #[error(transparent)]
    Engine(#[from] reminisce_core::dialogue::EngineError),
    #[error(transparent)]
    Summary(#[from] reminisce_core::summary::SummaryError),
    #[error("cannot write report: {0}")]
    Io(#[from] std::io::Error),
}

fn read_json<T: DeserializeOwned>(path: &Path, what: &str) -> Result<T, SimError> {
    let text = fs::read_to_string(path)
        .map_err(|e| SimError::FixtureInvalid(format!("{what} {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| SimError::FixtureInvalid(format!("{what} {}: {e}", path.display())))
}

pub fn load_user(path: &Path) -> Result<UserRecord, SimError> {
    let user: UserRecord = read_json(path, "user fixture")?;
    validate_user(user).map_err(|e| SimError::FixtureInvalid(e.to_string()))
}

#[derive(Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    Many(Vec<Photo>),
    One(Box<Photo>),
}

/// Reads a photo fixture holding either one photo or an array of photos.
pub fn load_photos(path: &Path) -> Result<Vec<Photo>, SimError> {
    Ok(match read_json(path, "photo fixture")? {
        OneOrMany::Many(v) => v,
        OneOrMany::One(p) => vec![*p],
    })
}

pub fn load_persona(path: Option<&Path>) -> Result<PersonaConfig, SimError> {
    match path {
        Some(p) => read_json(p, "persona fixture"),
        None => Ok(PersonaConfig::default()),
    }
}

/// Parses a provider spec: `remote` or `scripted:<path>`.
pub fn provider_from_spec(spec: &str) -> Result<Arc<dyn LlmProvider>, SimError> {
    if spec == "remote" {
        let config = RemoteConfig::from_env().map_err(SimError::FixtureInvalid)?;
        return Ok(Arc::new(RemoteProvider::new(config)?));
    }
    if let Some(path) = spec.strip_prefix("scripted:") {
        let provider = ScriptedProvider::from_file(path)
            .map_err(|e| SimError::FixtureInvalid(format!("script {path}: {e}")))?;
        return Ok(Arc::new(provider));
    }
    Err(SimError::FixtureInvalid(format!(
        "unknown provider `{spec}` (expected `remote` or `scripted:<path>`)"
    )))
}
