//! Repeated runs of every question through the embedded engine.

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use clio_core::event::RunStatus;
use clio_core::telemetry::{classify_trace, compute_features_with, TraceFeatures};
use clio_core::{RunConfig, RunContext, RunMode};
use clio_steering::{execute_attempt, GatewayFactory, RunStore};
use serde::{Deserialize, Serialize};

use crate::questions::{AnswerType, QuestionRecord};
use crate::score::score_answer;
use crate::BenchError;

pub struct BenchOptions {
    pub gateways: GatewayFactory,
    /// Where each run's event log is written, in the steering store layout.
    pub log_dir: Option<PathBuf>,
    pub parallelism: usize,
    /// Stamp wall-clock times on events and record run durations.
    /// Off keeps reports byte-stable.
    pub wall_clock: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub run: usize,
    pub run_id: String,
    pub status: Option<RunStatus>,
    pub prediction: Option<String>,
    pub correct: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub call_count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub duration_ms: Option<u64>,
    pub features: TraceFeatures,
    pub regime: Option<String>,
    pub escalated: bool,
}

impl RunOutcome {
    pub fn failed(&self) -> bool {
        self.status != Some(RunStatus::Completed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRecord {
    pub question_id: String,
    pub category: String,
    pub answer_type: AnswerType,
    pub gold_answer: String,
    pub runs: Vec<RunOutcome>,
    pub pass_at_1: Vec<bool>,
}

/// Run ids are derived from the question id and run index, so repeated
/// benchmarks write the same log files.
pub fn bench_run_id(question_id: &str, run: usize) -> String {
    let safe: String = question_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("bench-{safe}-r{run}")
}

/// Runs every question `k` times. Per-run failures are recorded, not fatal.
pub fn run_benchmark(
    questions: &[QuestionRecord],
    mode: RunMode,
    config: &RunConfig,
    k: usize,
    opts: &BenchOptions,
) -> Result<Vec<BenchmarkRecord>, BenchError> {
    if questions.is_empty() {
        return Err(BenchError::EmptyQuestions);
    }
    if k == 0 {
        return Err(BenchError::InvalidK);
    }
    config.validate(mode)?;
    let store = match &opts.log_dir {
        Some(dir) => Some(RunStore::open(dir)?),
        None => None,
    };
    let jobs: Vec<(usize, usize)> = (0..questions.len())
        .flat_map(|q| (0..k).map(move |r| (q, r)))
        .collect();
    let results: Mutex<Vec<Option<RunOutcome>>> = Mutex::new(vec![None; jobs.len()]);
    let next = AtomicUsize::new(0);
    let workers = opts.parallelism.clamp(1, jobs.len());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(q, r)) = jobs.get(i) else { break };
                let outcome = run_one(&questions[q], r, mode, config, opts, store.as_ref());
                results.lock().unwrap_or_else(|p| p.into_inner())[i] = Some(outcome);
            });
        }
    });
    let mut outcomes = results
        .into_inner()
        .unwrap_or_else(|p| p.into_inner())
        .into_iter()
        .flatten();
    Ok(questions
        .iter()
        .map(|q| {
            let runs: Vec<RunOutcome> = outcomes.by_ref().take(k).collect();
            BenchmarkRecord {
                question_id: q.id.clone(),
                category: q.category.clone(),
                answer_type: q.answer_type,
                gold_answer: q.gold_answer.clone(),
                pass_at_1: runs.iter().map(|r| r.correct).collect(),
                runs,
            }
        })
        .collect())
}

fn run_one(
    q: &QuestionRecord,
    run: usize,
    mode: RunMode,
    config: &RunConfig,
    opts: &BenchOptions,
    store: Option<&RunStore>,
) -> RunOutcome {
    let run_id = bench_run_id(&q.id, run);
    let started = Instant::now();
    let ctx = (opts.gateways)()
        .map_err(|e| e.to_string())
        .and_then(|gateway| {
            RunContext::builder(&run_id, gateway)
                .config(config.clone())
                .wall_clock(opts.wall_clock)
                .start(&q.question, mode)
                .map_err(|e| e.to_string())
        });
    let ctx = match ctx {
        Ok(ctx) => ctx,
        Err(error) => {
            tracing::warn!(run = %run_id, %error, "run could not start");
            return RunOutcome {
                run,
                run_id,
                status: None,
                prediction: None,
                correct: false,
                error: Some(error),
                call_count: 0,
                duration_ms: None,
                features: compute_features_with(
                    &Default::default(),
                    config.telemetry.amplitude_eps,
                ),
                regime: None,
                escalated: false,
            };
        }
    };
    let result = execute_attempt(&ctx, &q.question, mode);
    let duration_ms = opts
        .wall_clock
        .then(|| started.elapsed().as_millis() as u64);
    let events = ctx.events();
    if let Some(store) = store {
        if let Err(e) = store.write_run(&run_id, &events) {
            tracing::error!(run = %run_id, error = %e, "could not persist run log");
        }
    }
    let trace = ctx.trace();
    let features = compute_features_with(&trace, config.telemetry.amplitude_eps);
    let class = (features.n_events >= 2).then(|| classify_trace(&features, &config.telemetry));
    let (prediction, error) = match result {
        Ok(answer) => (Some(answer), None),
        Err(e) => (None, Some(e.to_string())),
    };
    RunOutcome {
        run,
        run_id,
        status: ctx.status(),
        correct: prediction
            .as_deref()
            .is_some_and(|p| score_answer(p, &q.gold_answer, q.answer_type)),
        prediction,
        error,
        call_count: ctx.total_calls(),
        duration_ms,
        features,
        regime: class.map(|c| c.regime.as_str().to_string()),
        escalated: class.is_some_and(|c| c.escalate),
    }
}
