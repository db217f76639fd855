use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use reminisce_core::dialogue::{DialogueEngine, EngineConfig};
use reminisce_core::prompts::PromptCatalog;
use reminisce_sim::{
    emit_report, load_persona, load_photos, load_user, provider_from_spec, run_simulation,
    ReportFormat, SimError, SimParams,
};
use tracing_subscriber::EnvFilter;

/// Run a chatbot against a simulated (or scripted) elderly user and print
/// the transcript with flow metrics.
#[derive(Debug, Parser)]
#[command(name = "reminisce-sim", version)]
struct Cli {
    /// User fixture (JSON).
    #[arg(long)]
    user: PathBuf,
    /// Photo fixture: one photo or an array of photos (JSON).
    #[arg(long)]
    photo: PathBuf,
    /// Persona fixture (JSON). The built-in persona is used when omitted.
    #[arg(long)]
    persona: Option<PathBuf>,
    /// `remote` or `scripted:<path>`.
    #[arg(long, default_value = "remote")]
    chatbot_provider: String,
    /// `remote` or `scripted:<path>`.
    #[arg(long, default_value = "remote")]
    persona_provider: String,
    /// Engine-step budget; defaults to the persona's max_rounds.
    #[arg(long)]
    max_rounds: Option<u32>,
    #[arg(long, value_enum, default_value = "text")]
    format: ReportFormat,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Epoch seconds stamped on sessions and summaries.
    #[arg(long, default_value_t = 0)]
    now: i64,
    /// Directory of prompt templates overriding the built-in ones.
    #[arg(long, env = "PROMPT_DIR")]
    prompt_dir: Option<PathBuf>,
}

async fn run(cli: Cli) -> Result<(), SimError> {
    let user = load_user(&cli.user)?;
    let photos = load_photos(&cli.photo)?;
    let persona = load_persona(cli.persona.as_deref())?;
    let prompts = match &cli.prompt_dir {
        Some(dir) => PromptCatalog::load_dir(dir).map_err(|e| SimError::FixtureInvalid(e.to_string()))?,
        None => PromptCatalog::builtin(),
    };
    let engine = DialogueEngine::new(prompts, EngineConfig::default());
    let chatbot = provider_from_spec(&cli.chatbot_provider)?;
    let persona_llm = provider_from_spec(&cli.persona_provider)?;
    let params = SimParams {
        max_rounds: cli.max_rounds.unwrap_or(persona.max_rounds),
        now: cli.now,
    };
    let report = run_simulation(
        &engine,
        &user,
        &photos,
        &persona,
        chatbot.as_ref(),
        persona_llm.as_ref(),
        params,
    )
    .await?;
    let rendered = emit_report(&report, cli.format);
    match &cli.out {
        Some(path) => std::fs::write(path, rendered)?,
        None => print!("{rendered}"),
    }
    Ok(())
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
