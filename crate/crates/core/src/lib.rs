//! Photo-grounded reminiscence dialogue.
//!
//! The crate holds the domain model, the option-constrained dialogue engine,
//! question generation, chat summaries, photo selection, face identity
//! matching, the LLM provider seam and a file-backed store. The HTTP service
//! and the simulation harness are thin layers over these modules.

pub mod dialogue;
pub mod domain;
pub mod face;
pub mod llm;
pub mod photo_policy;
pub mod prompts;
pub mod qa;
pub mod store;
pub mod summary;

pub use dialogue::{
    allowed_options, apply_option, AgentDecision, DialogueEngine, Effect, EngineConfig, EngineError,
    FlowPolicy, OptionSet, StepOutcome,
};
pub use domain::*;
pub use llm::{ChatMessage, CompletionParams, LlmError, LlmProvider};
pub use photo_policy::{mark_discussed, select_next_photo, PolicyError};
pub use prompts::PromptCatalog;
pub use store::{Store, StoreError, Versioned};
pub use summary::{apply_summary, summarize_session, SummaryError};
