//! Running one attempt of a run and choosing a model backend.

use std::path::Path;
use std::sync::Arc;

use clio_core::cognitive::Engine;
use clio_core::event::RunStatus;
use clio_core::gateway::{Embedder, Gateway, HashEmbedder, OpenAiChat, OpenAiEmbedder, ScriptedModel};
use clio_core::graph::more_thinking;
use clio_core::run::RunError;
use clio_core::{RunContext, RunMode};

/// Builds a fresh gateway per run, so scripted rule counters never leak between runs.
pub type GatewayFactory = Arc<dyn Fn() -> Result<Arc<Gateway>, String> + Send + Sync>;

pub const ENV_FIXTURES: &str = "CLIO_FIXTURES";

/// Scripted backend reading a fixture directory on every run.
pub fn fixture_backend(dir: impl AsRef<Path>) -> GatewayFactory {
    let dir = dir.as_ref().to_path_buf();
    Arc::new(move || {
        let model = ScriptedModel::from_dir(&dir).map_err(|e| format!("{}: {e}", dir.display()))?;
        Ok(Arc::new(Gateway::scripted(Arc::new(model))))
    })
}

/// `CLIO_FIXTURES` selects the scripted backend; otherwise the
/// OpenAI-compatible endpoint from `CLIO_API_BASE` / `CLIO_MODEL`.
/// Without `CLIO_EMBED_MODEL` the local hash embedder is used.
pub fn backend_from_env() -> Result<GatewayFactory, String> {
    if let Ok(dir) = std::env::var(ENV_FIXTURES) {
        return Ok(fixture_backend(dir));
    }
    if OpenAiChat::from_env().is_none() {
        return Err("no model backend: set CLIO_MODEL (remote) or CLIO_FIXTURES (scripted)".into());
    }
    Ok(Arc::new(|| {
        let chat = OpenAiChat::from_env().ok_or("CLIO_MODEL is not set")?;
        let embedder: Arc<dyn Embedder> = match OpenAiEmbedder::from_env() {
            Some(e) => Arc::new(e),
            None => Arc::new(HashEmbedder::default()),
        };
        Ok(Arc::new(Gateway::new(Arc::new(chat), embedder)))
    }))
}

/// Runs the current attempt to its end and makes sure the log says how it ended.
///
/// A cancellation caused by a run-wide terminate needs no event. A root
/// channel terminated on its own ends the run as terminated; any other error
/// is logged as a run failure.
pub fn execute_attempt(ctx: &Arc<RunContext>, question: &str, mode: RunMode) -> Result<String, RunError> {
    let attempt = ctx.attempt();
    let outcome = Engine::new(ctx.clone()).and_then(|engine| {
        let params = ctx.config().loop_cfg.params.clone();
        match mode {
            RunMode::Single => engine
                .run_channel(question, params)
                .map(|s| clio_core::reply::extract_answer(&s.thought)),
            RunMode::MoreThinking => {
                more_thinking(&engine, question, params, &ctx.config().more_thinking).map(|o| o.answer)
            }
        }
    });
    let err = match outcome {
        Ok(answer) => return Ok(answer),
        Err(e) => e,
    };
    let live = matches!(ctx.status(), Some(RunStatus::Running | RunStatus::AwaitingUser));
    if live && ctx.attempt() == attempt {
        match &err {
            RunError::Cancelled if !ctx.is_run_cancelled() => {
                let _ = ctx.terminate(None, "root channel terminated");
            }
            RunError::Cancelled => {}
            other => {
                tracing::warn!(run = %ctx.run_id(), error = %other, "run failed");
                ctx.fail(&other.to_string());
            }
        }
    }
    Err(err)
}
