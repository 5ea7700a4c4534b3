//! Run lifecycle: creation, background execution, steering and snapshots.

use std::collections::{BTreeMap, VecDeque};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::thread::JoinHandle;

use clio_core::event::{EventBody, RunStatus};
use clio_core::run::{EventSink, Resumed};
use clio_core::telemetry::{classify_trace, compute_features_with};
use clio_core::{RunConfig, RunContext, RunEvent, RunMode, SCHEMA_VERSION};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::broadcast;

use crate::exec::{execute_attempt, GatewayFactory};
use crate::record::RunRecord;
use crate::store::{LogWriter, RunStore};
use crate::ServiceError;

pub const RESTART_REASON: &str = "service restarted";

#[derive(Debug, Clone, Deserialize)]
pub struct CreateRun {
    pub question: String,
    #[serde(default = "default_mode")]
    pub mode: RunMode,
    #[serde(default)]
    pub config: RunConfig,
}

fn default_mode() -> RunMode {
    RunMode::Single
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SteerAction {
    Interject,
    Terminate,
    Resume,
}

#[derive(Debug, Clone, Deserialize)]
pub struct SteeringCommand {
    #[serde(default)]
    pub channel_id: Option<String>,
    pub action: SteerAction,
    #[serde(default)]
    pub message: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteerAck {
    pub schema_version: u32,
    pub run_id: String,
    pub action: SteerAction,
    /// Seq of the event the command appended.
    pub seq: u64,
    pub status: RunStatus,
    pub attempt: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum View {
    Record,
    Graph,
    Trace,
    Features,
}

pub struct ServiceOptions {
    pub data_dir: PathBuf,
    pub gateways: GatewayFactory,
    /// Stamp events with wall-clock time. Off gives byte-stable logs.
    pub wall_clock: bool,
}

/// Persists every event, keeps the folded record current and wakes streams.
struct PersistSink {
    store: Arc<RunStore>,
    writer: Mutex<LogWriter>,
    record: Mutex<Option<RunRecord>>,
    wake: broadcast::Sender<u64>,
}

impl EventSink for PersistSink {
    fn on_event(&self, event: &RunEvent) {
        if let Err(e) = self.writer.lock().unwrap_or_else(|p| p.into_inner()).append(event) {
            tracing::error!(error = %e, "event log append failed");
        }
        let mut record = self.record.lock().unwrap_or_else(|p| p.into_inner());
        let changed = match record.as_mut() {
            Some(r) => r.apply(event),
            None => {
                *record = RunRecord::from_created(event);
                record.is_some()
            }
        };
        if changed {
            if let Some(r) = record.as_ref() {
                if let Err(e) = self.store.put_record(r) {
                    tracing::error!(error = %e, "index update failed");
                }
            }
        }
        let _ = self.wake.send(event.seq);
    }
}

struct RunSlot {
    ctx: Arc<RunContext>,
    sink: Arc<PersistSink>,
    question: String,
    mode: RunMode,
    worker: Mutex<Option<JoinHandle<()>>>,
}

impl RunSlot {
    fn record(&self) -> RunRecord {
        self.sink
            .record
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .clone()
            .expect("slot has a created event")
    }

    /// Starts the current attempt on its own thread, after any earlier attempt has unwound.
    fn launch(self: &Arc<Self>) {
        let mut worker = self.worker.lock().unwrap_or_else(|p| p.into_inner());
        let previous = worker.take();
        let slot = self.clone();
        *worker = Some(std::thread::spawn(move || {
            if let Some(h) = previous {
                let _ = h.join();
            }
            let _ = execute_attempt(&slot.ctx, &slot.question, slot.mode);
        }));
    }
}

pub struct Service {
    store: Arc<RunStore>,
    gateways: GatewayFactory,
    wall_clock: bool,
    runs: RwLock<BTreeMap<String, Arc<RunSlot>>>,
    next_id: AtomicU64,
}

impl Service {
    /// Opens the data directory and restores every persisted run. Runs that
    /// were still live are terminated, so they can be resumed explicitly.
    pub fn open(opts: ServiceOptions) -> Result<Arc<Self>, ServiceError> {
        let store = Arc::new(RunStore::open(&opts.data_dir)?);
        let mut runs = BTreeMap::new();
        let mut max_id = 0;
        for id in store.run_ids()? {
            let events = store.load_events(&id)?;
            let Some(record) = RunRecord::fold(&events) else {
                tracing::warn!(run = %id, "skipping log without a created event");
                continue;
            };
            if let Some(n) = id.strip_prefix("run-").and_then(|n| n.parse::<u64>().ok()) {
                max_id = max_id.max(n);
            }
            if store.stored_record(&id).as_ref() != Some(&record) {
                store.put_record(&record)?;
            }
            let (wake, _) = broadcast::channel(256);
            let sink = Arc::new(PersistSink {
                writer: Mutex::new(store.writer(&id)?),
                store: store.clone(),
                record: Mutex::new(Some(record.clone())),
                wake,
            });
            let gateway = (opts.gateways)().map_err(ServiceError::Backend)?;
            let ctx = RunContext::builder(&id, gateway)
                .config(record.config.clone())
                .wall_clock(opts.wall_clock)
                .sink(sink.clone())
                .restore(events);
            if !record.status.is_terminal() {
                tracing::info!(run = %id, "terminating run interrupted by restart");
                ctx.terminate(None, RESTART_REASON)?;
            }
            runs.insert(
                id,
                Arc::new(RunSlot {
                    ctx,
                    sink,
                    question: record.question,
                    mode: record.mode,
                    worker: Mutex::new(None),
                }),
            );
        }
        Ok(Arc::new(Self {
            store,
            gateways: opts.gateways,
            wall_clock: opts.wall_clock,
            runs: RwLock::new(runs),
            next_id: AtomicU64::new(max_id + 1),
        }))
    }

    pub fn store(&self) -> &RunStore {
        &self.store
    }

    fn slot(&self, run_id: &str) -> Result<Arc<RunSlot>, ServiceError> {
        self.runs
            .read()
            .unwrap_or_else(|p| p.into_inner())
            .get(run_id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownRun(run_id.to_string()))
    }

    /// Validates, persists the `created` event and starts execution in the background.
    pub fn create_run(&self, req: CreateRun) -> Result<RunRecord, ServiceError> {
        if req.question.trim().is_empty() {
            return Err(ServiceError::InvalidRequest("question is empty".into()));
        }
        req.config.validate(req.mode)?;
        let gateway = (self.gateways)().map_err(ServiceError::Backend)?;
        let id = format!("run-{:06}", self.next_id.fetch_add(1, Ordering::SeqCst));
        let (wake, _) = broadcast::channel(256);
        let sink = Arc::new(PersistSink {
            writer: Mutex::new(self.store.writer(&id)?),
            store: self.store.clone(),
            record: Mutex::new(None),
            wake,
        });
        let ctx = RunContext::builder(&id, gateway)
            .config(req.config)
            .wall_clock(self.wall_clock)
            .sink(sink.clone())
            .start(&req.question, req.mode)?;
        let slot = Arc::new(RunSlot {
            ctx,
            sink,
            question: req.question.trim().to_string(),
            mode: req.mode,
            worker: Mutex::new(None),
        });
        self.runs
            .write()
            .unwrap_or_else(|p| p.into_inner())
            .insert(id.clone(), slot.clone());
        tracing::info!(run = %id, mode = ?req.mode, "run created");
        let record = slot.record();
        slot.launch();
        Ok(record)
    }

    pub fn list(&self) -> Vec<RunRecord> {
        self.runs
            .read()
            .unwrap_or_else(|p| p.into_inner())
            .values()
            .map(|s| s.record())
            .collect()
    }

    pub fn record(&self, run_id: &str) -> Result<RunRecord, ServiceError> {
        Ok(self.slot(run_id)?.record())
    }

    pub fn context(&self, run_id: &str) -> Result<Arc<RunContext>, ServiceError> {
        Ok(self.slot(run_id)?.ctx.clone())
    }

    /// Blocks until the run's current attempt has finished executing.
    pub fn wait(&self, run_id: &str) -> Result<RunRecord, ServiceError> {
        let slot = self.slot(run_id)?;
        loop {
            let handle = slot.worker.lock().unwrap_or_else(|p| p.into_inner()).take();
            match handle {
                Some(h) => {
                    let _ = h.join();
                }
                None => return Ok(slot.record()),
            }
        }
    }

    /// Applies one steering command. Commands on a run are linearized by the
    /// run's log lock, so acknowledgement order matches log order.
    pub fn steer(&self, run_id: &str, cmd: SteeringCommand) -> Result<SteerAck, ServiceError> {
        let slot = self.slot(run_id)?;
        let ctx = &slot.ctx;
        let message = cmd.message.filter(|m| !m.trim().is_empty());
        let seq = match cmd.action {
            SteerAction::Interject => {
                let message =
                    message.ok_or_else(|| ServiceError::InvalidRequest("interject requires a message".into()))?;
                ctx.interject(cmd.channel_id, &message)?
            }
            SteerAction::Terminate => ctx.terminate(
                cmd.channel_id,
                message.as_deref().unwrap_or("terminated by user"),
            )?,
            SteerAction::Resume => {
                if cmd.channel_id.is_some() {
                    return Err(ServiceError::InvalidRequest("resume applies to the whole run".into()));
                }
                match ctx.resume(message)? {
                    Resumed::Unpaused => {}
                    Resumed::NewAttempt(k) => {
                        tracing::info!(run = %run_id, attempt = k, "resuming terminated run");
                        slot.launch();
                    }
                }
                ctx.events()
                    .iter()
                    .rev()
                    .find(|e| matches!(e.body, EventBody::Resume { .. }))
                    .map_or(0, |e| e.seq)
            }
        };
        let record = slot.record();
        Ok(SteerAck {
            schema_version: SCHEMA_VERSION,
            run_id: run_id.to_string(),
            action: cmd.action,
            seq,
            status: record.status,
            attempt: record.attempt,
        })
    }

    pub fn snapshot(&self, run_id: &str, view: View) -> Result<Value, ServiceError> {
        let slot = self.slot(run_id)?;
        let ctx = &slot.ctx;
        Ok(match view {
            View::Record => serde_json::to_value(slot.record()).expect("record serializes"),
            View::Graph => ctx
                .events()
                .into_iter()
                .rev()
                .find_map(|e| match e.body {
                    EventBody::Graph { stage, detail } if stage == "export" => Some(detail),
                    _ => None,
                })
                .ok_or_else(|| ServiceError::ViewUnavailable(format!("{run_id} has no built graph")))?,
            View::Trace => {
                let mut v = serde_json::to_value(ctx.trace()).expect("trace serializes");
                v["schema_version"] = json!(SCHEMA_VERSION);
                v
            }
            View::Features => {
                let cfg = &ctx.config().telemetry;
                let features = compute_features_with(&ctx.trace(), cfg.amplitude_eps);
                let classification = (features.n_events >= 2).then(|| classify_trace(&features, cfg));
                json!({
                    "schema_version": SCHEMA_VERSION,
                    "run_id": run_id,
                    "features": features,
                    "classification": classification,
                })
            }
        })
    }

    /// Events with `seq >= from_seq` so far, then live ones via [`EventCursor::next`].
    pub fn cursor(&self, run_id: &str, from_seq: u64) -> Result<EventCursor, ServiceError> {
        let slot = self.slot(run_id)?;
        let wake = slot.sink.wake.subscribe();
        Ok(EventCursor {
            ctx: slot.ctx.clone(),
            wake,
            next_seq: from_seq,
            pending: VecDeque::new(),
        })
    }
}

/// Ordered, gapless reader over one run's log that waits for new events and
/// ends once the run is terminal and fully delivered.
pub struct EventCursor {
    ctx: Arc<RunContext>,
    wake: broadcast::Receiver<u64>,
    next_seq: u64,
    pending: VecDeque<RunEvent>,
}

impl EventCursor {
    pub async fn next(&mut self) -> Option<RunEvent> {
        loop {
            if let Some(e) = self.pending.pop_front() {
                return Some(e);
            }
            // Status first: a terminal status read here guarantees the
            // terminal event is included in the read that follows.
            let terminal = self.ctx.status().is_some_and(|s| s.is_terminal());
            let fresh = self.ctx.events_from(self.next_seq);
            if let Some(last) = fresh.last() {
                self.next_seq = last.seq + 1;
                self.pending.extend(fresh);
                continue;
            }
            if terminal {
                return None;
            }
            match self.wake.recv().await {
                Ok(_) | Err(broadcast::error::RecvError::Lagged(_)) => {}
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    }
}
