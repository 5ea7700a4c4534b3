use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use clio::bench::{run_benchmark, BenchOptions};
use clio::questions::load_questions;
use clio::report::BenchReport;
use clio::BenchError;
use clio_core::graph::{drift_search, DriftOptions, ThoughtGraph};
use clio_core::run::RunError;
use clio_core::telemetry::{compute_features_with, extract_trace};
use clio_core::{RunConfig, RunMode};
use clio_steering::{
    backend_from_env, fixture_backend, CreateRun, GatewayFactory, RunStore, Service,
    ServiceOptions, DEFAULT_LISTEN, ENV_DATA_DIR, ENV_LISTEN, ENV_UI_DIR,
};

const EXIT_FAILURES: u8 = 1;
const EXIT_INVALID: u8 = 2;

#[derive(Parser)]
#[command(
    name = "clio",
    version,
    about = "Recursive, confidence-gated reasoning runs and benchmarks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Single,
    MoreThinking,
}

impl From<Mode> for RunMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Single => RunMode::Single,
            Mode::MoreThinking => RunMode::MoreThinking,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one question and print its record.
    Run {
        #[arg(long)]
        question: String,
        #[arg(long, value_enum, default_value = "single")]
        mode: Mode,
        /// Run configuration JSON file.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Scripted fixture directory instead of the remote model.
        #[arg(long)]
        fixtures: Option<PathBuf>,
        #[arg(long, env = ENV_DATA_DIR, default_value = "clio-data")]
        data_dir: PathBuf,
    },
    /// Run every question k times and write a JSON report plus a CSV summary.
    Bench {
        #[arg(long)]
        questions: PathBuf,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, value_enum, default_value = "single")]
        mode: Mode,
        #[arg(long)]
        out: PathBuf,
        /// CSV summary path; defaults to the report path with a .csv extension.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        fixtures: Option<PathBuf>,
        /// Directory for the per-run event logs.
        #[arg(long)]
        logs: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        parallel: usize,
        /// Record wall-clock times; reports are then no longer byte-stable.
        #[arg(long)]
        wall_clock: bool,
    },
    /// Export a run's uncertainty trace as CSV and print its features.
    Features {
        #[arg(long)]
        run_id: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, env = ENV_DATA_DIR, default_value = "clio-data")]
        data_dir: PathBuf,
    },
    /// Answer a question from an exported graph with DRIFT search.
    Drift {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        question: String,
        #[arg(long)]
        fixtures: Option<PathBuf>,
        #[arg(long, default_value_t = 2)]
        folds: usize,
        #[arg(long, default_value_t = 3)]
        follow_ups: usize,
    },
    /// Start the HTTP steering service.
    Serve {
        #[arg(long, env = ENV_LISTEN, default_value = DEFAULT_LISTEN)]
        listen: String,
        #[arg(long, env = ENV_DATA_DIR, default_value = "clio-data")]
        data_dir: PathBuf,
        #[arg(long)]
        fixtures: Option<PathBuf>,
        /// Static dashboard assets.
        #[arg(long, env = ENV_UI_DIR)]
        ui_dir: Option<PathBuf>,
    },
}

/// A command failure with its exit code.
struct Failure(u8, String);

impl From<BenchError> for Failure {
    fn from(e: BenchError) -> Self {
        let code = match e {
            BenchError::Store(_) => EXIT_FAILURES,
            _ => EXIT_INVALID,
        };
        Failure(code, e.to_string())
    }
}

fn invalid(msg: impl std::fmt::Display) -> Failure {
    Failure(EXIT_INVALID, msg.to_string())
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure(EXIT_FAILURES, format!("{}: {e}", path.display()))
}

/// Prints a line to stdout; a closed pipe is not an error.
fn emit(line: &str) {
    let _ = writeln!(std::io::stdout(), "{line}");
}

fn read_config(path: Option<&Path>) -> Result<RunConfig, Failure> {
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    let raw =
        std::fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&raw).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

fn gateways(fixtures: Option<&Path>) -> Result<GatewayFactory, Failure> {
    match fixtures {
        Some(dir) => Ok(fixture_backend(dir)),
        None => backend_from_env().map_err(invalid),
    }
}

fn write(path: &Path, body: &str) -> Result<(), Failure> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| io_failure(parent, e))?;
    }
    std::fs::write(path, body).map_err(|e| io_failure(path, e))
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run {
            question,
            mode,
            config,
            fixtures,
            data_dir,
        } => {
            let config = read_config(config.as_deref())?;
            let svc = Service::open(ServiceOptions {
                data_dir,
                gateways: gateways(fixtures.as_deref())?,
                wall_clock: true,
            })
            .map_err(|e| Failure(EXIT_FAILURES, e.to_string()))?;
            let created = svc
                .create_run(CreateRun {
                    question,
                    mode: mode.into(),
                    config,
                })
                .map_err(|e| match e {
                    clio_steering::ServiceError::InvalidConfig(_)
                    | clio_steering::ServiceError::InvalidRequest(_) => invalid(e),
                    other => Failure(EXIT_FAILURES, other.to_string()),
                })?;
            let record = svc
                .wait(&created.run_id)
                .map_err(|e| Failure(EXIT_FAILURES, e.to_string()))?;
            emit(&serde_json::to_string_pretty(&record).expect("record serializes"));
            if record.status != clio_core::event::RunStatus::Completed {
                return Err(Failure(
                    EXIT_FAILURES,
                    format!("run ended {:?}", record.status),
                ));
            }
            Ok(())
        }
        Command::Bench {
            questions,
            k,
            mode,
            out,
            csv,
            config,
            fixtures,
            logs,
            parallel,
            wall_clock,
        } => {
            let qs = load_questions(&questions)?;
            let config = read_config(config.as_deref())?;
            let opts = BenchOptions {
                gateways: gateways(fixtures.as_deref())?,
                log_dir: logs,
                parallelism: parallel,
                wall_clock,
            };
            let records = run_benchmark(&qs, mode.into(), &config, k, &opts)?;
            let report = BenchReport::new(mode.into(), k, config, records)?;
            write(&out, &report.to_json())?;
            write(
                &csv.unwrap_or_else(|| out.with_extension("csv")),
                &report.summary_csv(),
            )?;
            let total = &report.accuracy.total;
            emit(&format!("accuracy {} = {}", total.fraction, total.percent));
            if report.failures > 0 {
                return Err(Failure(
                    EXIT_FAILURES,
                    format!("{} runs did not complete", report.failures),
                ));
            }
            Ok(())
        }
        Command::Features {
            run_id,
            out,
            data_dir,
        } => {
            let store =
                RunStore::open(&data_dir).map_err(|e| Failure(EXIT_FAILURES, e.to_string()))?;
            if !store.log_path(&run_id).exists() {
                return Err(invalid(format!("unknown run {run_id}")));
            }
            let events = store
                .load_events(&run_id)
                .map_err(|e| Failure(EXIT_FAILURES, e.to_string()))?;
            let amplitude_eps = clio_steering::RunRecord::fold(&events)
                .map(|r| r.config.telemetry.amplitude_eps)
                .unwrap_or_else(|| RunConfig::default().telemetry.amplitude_eps);
            let trace = extract_trace(&run_id, &events);
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record([
                "index",
                "id",
                "timestamp",
                "level",
                "channel_id",
                "addressed_prior_ids",
                "description",
            ])
            .expect("in-memory write");
            for (i, e) in trace.events.iter().enumerate() {
                w.write_record([
                    i.to_string(),
                    e.id.clone(),
                    e.timestamp.to_string(),
                    e.level.to_string(),
                    e.channel_id.clone(),
                    e.addressed_prior_ids.join(";"),
                    e.description.clone(),
                ])
                .expect("in-memory write");
            }
            write(
                &out,
                &String::from_utf8(w.into_inner().expect("flush")).expect("utf-8"),
            )?;
            let features = compute_features_with(&trace, amplitude_eps);
            emit(&serde_json::to_string_pretty(&features).expect("features serialize"));
            Ok(())
        }
        Command::Drift {
            graph,
            question,
            fixtures,
            folds,
            follow_ups,
        } => {
            let raw = std::fs::read_to_string(&graph)
                .map_err(|e| invalid(format!("{}: {e}", graph.display())))?;
            let g = ThoughtGraph::from_json(&raw)
                .map_err(|e| invalid(format!("{}: {e}", graph.display())))?;
            let gateway = gateways(fixtures.as_deref())?().map_err(invalid)?;
            let call =
                |r: &clio_core::gateway::ModelRequest| gateway.complete(r).map_err(RunError::from);
            let opts = DriftOptions {
                folds,
                follow_ups,
                ..Default::default()
            };
            let outcome = drift_search(&question, &g, &opts, "g", &call, &gateway)
                .map_err(|e| Failure(EXIT_FAILURES, e.to_string()))?;
            emit(&serde_json::to_string_pretty(&outcome).expect("outcome serializes"));
            Ok(())
        }
        Command::Serve {
            listen,
            data_dir,
            fixtures,
            ui_dir,
        } => {
            let addr = listen
                .parse()
                .map_err(|e| invalid(format!("{listen}: {e}")))?;
            let svc = Service::open(ServiceOptions {
                data_dir,
                gateways: gateways(fixtures.as_deref())?,
                wall_clock: true,
            })
            .map_err(|e| Failure(EXIT_FAILURES, e.to_string()))?;
            let rt = tokio::runtime::Runtime::new()
                .map_err(|e| Failure(EXIT_FAILURES, e.to_string()))?;
            rt.block_on(clio_steering::http::serve(Arc::clone(&svc), addr, ui_dir))
                .map_err(|e| Failure(EXIT_FAILURES, e.to_string()))
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_INVALID } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure(code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
