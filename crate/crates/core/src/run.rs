//! Per-run event log, call accounting and steering mailbox.
//!
//! A [`RunContext`] is shared by every channel of a run. All mutation goes
//! through one lock: event appends, cancellation flags and guidance, so a
//! terminate can never interleave with a half-logged model call.

use std::collections::{HashMap, HashSet};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::{SystemTime, UNIX_EPOCH};

use thiserror::Error;

use crate::config::{InvalidConfig, RunConfig, RunMode};
use crate::event::{fold_status, in_scope, ChannelRole, EventBody, RunEvent, RunStatus};
use crate::gateway::{structured_call, Gateway, GatewayError, ModelRequest, ModelResponse};
use crate::state::{ChannelParams, StateError};
use crate::telemetry::{self, Classification, UncertaintyTrace};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RunError {
    #[error("run cancelled")]
    Cancelled,
    #[error("call budget of {0} exhausted")]
    BudgetExceeded(usize),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    State(#[from] StateError),
    #[error(transparent)]
    InvalidConfig(#[from] InvalidConfig),
    #[error("unknown channel {0}")]
    UnknownChannel(String),
    #[error("illegal state: {0}")]
    IllegalState(String),
    #[error("{0}")]
    Other(String),
}

/// Receives every event as it is appended, in sequence order.
pub trait EventSink: Send + Sync {
    fn on_event(&self, event: &RunEvent);
}

/// What a resume did to the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resumed {
    /// A paused run continues where its channels are blocked.
    Unpaused,
    /// A terminated run needs a fresh execution under this attempt number.
    NewAttempt(u32),
}

#[derive(Default)]
struct Inner {
    next_seq: u64,
    events: Vec<RunEvent>,
    spawned: HashSet<String>,
    run_cancelled: bool,
    cancelled_scopes: Vec<String>,
    guidance: Vec<(Option<String>, String)>,
    paused: bool,
    attempt: u32,
    attempt_calls: usize,
    classification: Option<Classification>,
    trace: UncertaintyTrace,
    uncertainty_counters: HashMap<String, usize>,
}

pub struct RunContext {
    run_id: String,
    gateway: Arc<Gateway>,
    config: RunConfig,
    wall_clock: bool,
    sinks: Vec<Arc<dyn EventSink>>,
    inner: Mutex<Inner>,
    unpaused: Condvar,
}

/// Splits a channel id into its attempt number and lineage (`r2.c0.1` → `(2, "c0.1")`).
pub fn split_attempt(channel: &str) -> (u32, &str) {
    if let Some(rest) = channel.strip_prefix('r') {
        if let Some((n, lineage)) = rest.split_once('.') {
            if let Ok(k) = n.parse() {
                return (k, lineage);
            }
        }
    }
    (0, channel)
}

/// Channel-id prefix for an attempt: empty for the first one.
pub fn attempt_prefix(attempt: u32) -> String {
    if attempt == 0 {
        String::new()
    } else {
        format!("r{attempt}.")
    }
}

pub struct RunContextBuilder {
    run_id: String,
    gateway: Arc<Gateway>,
    config: RunConfig,
    wall_clock: bool,
    sinks: Vec<Arc<dyn EventSink>>,
}

impl RunContextBuilder {
    pub fn config(mut self, config: RunConfig) -> Self {
        self.config = config;
        self
    }

    /// Record wall-clock milliseconds on events; off makes logs byte-stable.
    pub fn wall_clock(mut self, on: bool) -> Self {
        self.wall_clock = on;
        self
    }

    pub fn sink(mut self, sink: Arc<dyn EventSink>) -> Self {
        self.sinks.push(sink);
        self
    }

    fn build(self) -> RunContext {
        RunContext {
            run_id: self.run_id,
            gateway: self.gateway,
            config: self.config,
            wall_clock: self.wall_clock,
            sinks: self.sinks,
            inner: Mutex::new(Inner::default()),
            unpaused: Condvar::new(),
        }
    }

    /// Starts a new run, logging its `created` event.
    pub fn start(self, question: &str, mode: RunMode) -> Result<Arc<RunContext>, RunError> {
        if question.trim().is_empty() {
            return Err(StateError::EmptyQuestion.into());
        }
        self.config.validate(mode)?;
        let ctx = self.build();
        let config = ctx.config.clone();
        ctx.emit(
            None,
            EventBody::Created {
                question: question.trim().to_string(),
                mode,
                config,
            },
        );
        Ok(Arc::new(ctx))
    }

    /// Rebuilds a context from a persisted log, so steering and resumption continue it.
    pub fn restore(self, events: Vec<RunEvent>) -> Arc<RunContext> {
        let ctx = self.build();
        {
            let mut g = ctx.lock();
            let status = fold_status(&events);
            for e in &events {
                match &e.body {
                    EventBody::Spawn { .. } => {
                        if let Some(ch) = &e.channel_id {
                            g.spawned.insert(ch.clone());
                        }
                    }
                    EventBody::Interjection { scope, message } => {
                        g.guidance.push((scope.clone(), message.clone()))
                    }
                    EventBody::Resume { message, attempt } => {
                        g.attempt = *attempt;
                        g.attempt_calls = 0;
                        if let Some(m) = message {
                            g.guidance.push((None, m.clone()));
                        }
                    }
                    EventBody::Terminate { scope: Some(s), .. } => g.cancelled_scopes.push(s.clone()),
                    EventBody::ModelCall { .. } => g.attempt_calls += 1,
                    EventBody::Escalation { regime, escalate, .. } => {
                        g.classification = serde_json::from_value(serde_json::Value::String(regime.clone()))
                            .ok()
                            .map(|regime| Classification {
                                regime,
                                escalate: *escalate,
                            })
                    }
                    _ => {}
                }
            }
            g.trace = telemetry::extract_trace(&ctx.run_id, &events);
            for ev in &g.trace.events.clone() {
                *g.uncertainty_counters.entry(ev.channel_id.clone()).or_default() += 1;
            }
            g.run_cancelled = status == Some(RunStatus::Terminated);
            g.paused = status == Some(RunStatus::AwaitingUser);
            g.next_seq = events.last().map_or(0, |e| e.seq + 1);
            g.events = events;
        }
        Arc::new(ctx)
    }
}

impl RunContext {
    pub fn builder(run_id: impl Into<String>, gateway: Arc<Gateway>) -> RunContextBuilder {
        RunContextBuilder {
            run_id: run_id.into(),
            gateway,
            config: RunConfig::default(),
            wall_clock: true,
            sinks: Vec::new(),
        }
    }

    pub fn run_id(&self) -> &str {
        &self.run_id
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn gateway(&self) -> &Arc<Gateway> {
        &self.gateway
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn append(&self, g: &mut Inner, channel_id: Option<String>, body: EventBody) -> u64 {
        let seq = g.next_seq;
        g.next_seq += 1;
        let wall_ms = if self.wall_clock {
            SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_millis() as u64)
        } else {
            0
        };
        let event = RunEvent {
            seq,
            run_id: self.run_id.clone(),
            channel_id,
            body,
            timestamp: seq,
            wall_ms,
        };
        for sink in &self.sinks {
            sink.on_event(&event);
        }
        g.events.push(event);
        seq
    }

    /// Appends an event and returns its sequence number.
    pub fn emit(&self, channel_id: Option<&str>, body: EventBody) -> u64 {
        let mut g = self.lock();
        self.append(&mut g, channel_id.map(str::to_string), body)
    }

    /// Current logical time: the sequence number the next event will get.
    pub fn now(&self) -> u64 {
        self.lock().next_seq
    }

    pub fn attempt(&self) -> u32 {
        self.lock().attempt
    }

    pub fn spawn(
        &self,
        channel_id: &str,
        parent_id: Option<&str>,
        depth: u32,
        role: ChannelRole,
        params: Option<ChannelParams>,
    ) -> Result<u64, RunError> {
        let mut g = self.lock();
        if self.cancelled_locked(&g, channel_id) {
            return Err(RunError::Cancelled);
        }
        g.spawned.insert(channel_id.to_string());
        Ok(self.append(
            &mut g,
            Some(channel_id.to_string()),
            EventBody::Spawn {
                parent_id: parent_id.map(str::to_string),
                depth,
                role,
                params,
            },
        ))
    }

    fn cancelled_locked(&self, g: &Inner, channel: &str) -> bool {
        g.run_cancelled
            || split_attempt(channel).0 != g.attempt
            || g.cancelled_scopes.iter().any(|s| in_scope(channel, s))
    }

    pub fn is_cancelled(&self, channel: &str) -> bool {
        let g = self.lock();
        self.cancelled_locked(&g, channel)
    }

    pub fn is_spawned(&self, channel: &str) -> bool {
        self.lock().spawned.contains(channel)
    }

    pub fn is_run_cancelled(&self) -> bool {
        self.lock().run_cancelled
    }

    /// Blocks while the run is paused; fails if the channel was cancelled.
    pub fn checkpoint(&self, channel: &str) -> Result<(), RunError> {
        let g = self.lock();
        let g = self
            .unpaused
            .wait_while(g, |g| g.paused && !self.cancelled_locked(g, channel))
            .unwrap_or_else(|p| p.into_inner());
        if self.cancelled_locked(&g, channel) {
            Err(RunError::Cancelled)
        } else {
            Ok(())
        }
    }

    /// Reserves one call against the budget after the steering checkpoint.
    fn begin_call(&self, channel: &str) -> Result<(), RunError> {
        let g = self.lock();
        let mut g = self
            .unpaused
            .wait_while(g, |g| g.paused && !self.cancelled_locked(g, channel))
            .unwrap_or_else(|p| p.into_inner());
        if self.cancelled_locked(&g, channel) {
            return Err(RunError::Cancelled);
        }
        let budget = self.config.loop_cfg.call_budget;
        if g.attempt_calls >= budget {
            return Err(RunError::BudgetExceeded(budget));
        }
        g.attempt_calls += 1;
        Ok(())
    }

    /// Logs a finished call unless its channel was cancelled meanwhile; then
    /// the response is dropped.
    fn finish_call(&self, channel: &str, request: &ModelRequest, response: &ModelResponse) -> Result<(), RunError> {
        let mut g = self.lock();
        if self.cancelled_locked(&g, channel) {
            return Err(RunError::Cancelled);
        }
        self.append(
            &mut g,
            Some(channel.to_string()),
            EventBody::ModelCall {
                purpose: request.tag.purpose.as_str().to_string(),
                messages: request.messages.clone(),
                temperature: request.temperature,
                response_text: response.text.clone(),
                tool_invocation: response.tool_invocation.clone(),
            },
        );
        Ok(())
    }

    /// One logged, budgeted, cancellable model call on `channel`.
    pub fn call(&self, channel: &str, request: &ModelRequest) -> Result<ModelResponse, RunError> {
        self.begin_call(channel)?;
        let response = self.gateway.complete(request)?;
        self.finish_call(channel, request, &response)?;
        Ok(response)
    }

    /// Structured call with one re-ask on a reply that fails to parse.
    pub fn call_structured<T>(
        &self,
        channel: &str,
        request: &ModelRequest,
        parse: impl Fn(&ModelResponse) -> Result<T, String>,
    ) -> Result<T, RunError> {
        structured_call(request, |r| self.call(channel, r), parse)
    }

    /// Standing guidance visible to `channel`: run-wide interjections and
    /// those scoped to the channel or an ancestor, matched by lineage so
    /// they carry over into resumed attempts.
    pub fn guidance_for(&self, channel: &str) -> Vec<String> {
        let lineage = split_attempt(channel).1;
        self.lock()
            .guidance
            .iter()
            .filter(|(scope, _)| match scope {
                None => true,
                Some(s) => in_scope(lineage, split_attempt(s).1),
            })
            .map(|(_, m)| m.clone())
            .collect()
    }

    pub fn status(&self) -> Option<RunStatus> {
        fold_status(&self.lock().events)
    }

    fn require_live(&self, g: &Inner) -> Result<(), RunError> {
        match fold_status(&g.events) {
            Some(s) if s.is_terminal() => Err(RunError::IllegalState(format!(
                "run is {}",
                serde_json::to_value(s).map(|v| v.as_str().unwrap_or("").to_string()).unwrap_or_default()
            ))),
            None => Err(RunError::IllegalState("run has no events".into())),
            _ => Ok(()),
        }
    }

    fn require_channel(&self, g: &Inner, scope: &Option<String>) -> Result<(), RunError> {
        match scope {
            Some(ch) if !g.spawned.contains(ch) => Err(RunError::UnknownChannel(ch.clone())),
            _ => Ok(()),
        }
    }

    pub fn interject(&self, scope: Option<String>, message: &str) -> Result<u64, RunError> {
        if message.trim().is_empty() {
            return Err(RunError::IllegalState("interjection message is empty".into()));
        }
        let mut g = self.lock();
        self.require_live(&g)?;
        self.require_channel(&g, &scope)?;
        g.guidance.push((scope.clone(), message.trim().to_string()));
        Ok(self.append(
            &mut g,
            scope.clone(),
            EventBody::Interjection {
                scope,
                message: message.trim().to_string(),
            },
        ))
    }

    /// Cancels the run or one channel subtree. The flag and the event are
    /// written under one lock, so no call in scope is logged afterwards.
    pub fn terminate(&self, scope: Option<String>, reason: &str) -> Result<u64, RunError> {
        let mut g = self.lock();
        self.require_live(&g)?;
        self.require_channel(&g, &scope)?;
        match &scope {
            None => {
                g.run_cancelled = true;
                g.paused = false;
            }
            Some(s) => g.cancelled_scopes.push(s.clone()),
        }
        let seq = self.append(
            &mut g,
            scope.clone(),
            EventBody::Terminate {
                scope,
                reason: reason.to_string(),
            },
        );
        drop(g);
        self.unpaused.notify_all();
        Ok(seq)
    }

    /// Resumes a paused or terminated run. The message becomes run-wide guidance.
    pub fn resume(&self, message: Option<String>) -> Result<Resumed, RunError> {
        let mut g = self.lock();
        let message = message.filter(|m| !m.trim().is_empty()).map(|m| m.trim().to_string());
        let outcome = match fold_status(&g.events) {
            Some(RunStatus::AwaitingUser) => {
                g.paused = false;
                Resumed::Unpaused
            }
            Some(RunStatus::Terminated) => {
                g.run_cancelled = false;
                g.attempt += 1;
                g.attempt_calls = 0;
                Resumed::NewAttempt(g.attempt)
            }
            other => {
                return Err(RunError::IllegalState(format!(
                    "cannot resume a run that is {}",
                    other.map_or("unknown".to_string(), |s| format!("{s:?}").to_lowercase())
                )))
            }
        };
        if let Some(m) = &message {
            g.guidance.push((None, m.clone()));
        }
        let attempt = g.attempt;
        self.append(&mut g, None, EventBody::Resume { message, attempt });
        drop(g);
        self.unpaused.notify_all();
        Ok(outcome)
    }

    /// Logs an uncertainty and re-evaluates escalation on the run's trace so far.
    ///
    /// Links to ids not yet in the trace are dropped.
    pub fn record_uncertainty(
        &self,
        channel: &str,
        level: f64,
        description: &str,
        addresses: &[String],
    ) -> Result<String, RunError> {
        let mut g = self.lock();
        if self.cancelled_locked(&g, channel) {
            return Err(RunError::Cancelled);
        }
        let k = g.uncertainty_counters.entry(channel.to_string()).or_default();
        let id = format!("{channel}#u{k}");
        *k += 1;
        let known: HashSet<&str> = g.trace.events.iter().map(|e| e.id.as_str()).collect();
        let addressed: Vec<String> = addresses
            .iter()
            .filter(|a| known.contains(a.as_str()))
            .cloned()
            .collect();
        let seq = self.append(
            &mut g,
            Some(channel.to_string()),
            EventBody::Uncertainty {
                id: id.clone(),
                level,
                description: description.to_string(),
                addressed_prior_ids: addressed.clone(),
            },
        );
        g.trace.events.push(telemetry::UncertaintyEvent {
            id: id.clone(),
            timestamp: seq,
            level,
            description: description.to_string(),
            addressed_prior_ids: addressed,
            channel_id: channel.to_string(),
        });
        let tcfg = &self.config.telemetry;
        let features = telemetry::compute_features_with(&g.trace, tcfg.amplitude_eps);
        if features.n_events >= 2 {
            let class = telemetry::classify_trace(&features, tcfg);
            if g.classification != Some(class) {
                let newly_escalated = class.escalate && !g.classification.is_some_and(|c| c.escalate);
                let pause = newly_escalated && self.config.loop_cfg.pause_on_escalation;
                g.classification = Some(class);
                g.paused |= pause;
                tracing::info!(run = %self.run_id, regime = class.regime.as_str(), escalate = class.escalate, "trace classification changed");
                self.append(
                    &mut g,
                    None,
                    EventBody::Escalation {
                        regime: class.regime.as_str().to_string(),
                        escalate: class.escalate,
                        paused: pause,
                    },
                );
            }
        }
        Ok(id)
    }

    /// Logs the final answer unless the run was cancelled.
    pub fn complete(&self, state_id: Option<String>, text: &str, confidence: Option<f64>) -> Result<u64, RunError> {
        let mut g = self.lock();
        if g.run_cancelled {
            return Err(RunError::Cancelled);
        }
        Ok(self.append(
            &mut g,
            None,
            EventBody::Answer {
                state_id,
                text: text.to_string(),
                confidence,
            },
        ))
    }

    pub fn fail(&self, error: &str) -> u64 {
        self.emit(None, EventBody::Failure { error: error.to_string() })
    }

    /// Model calls logged on `scope` and its subtree.
    pub fn calls_in_scope(&self, scope: &str) -> usize {
        self.lock()
            .events
            .iter()
            .filter(|e| e.is_model_call() && e.channel_id.as_deref().is_some_and(|c| in_scope(c, scope)))
            .count()
    }

    pub fn total_calls(&self) -> usize {
        self.lock().events.iter().filter(|e| e.is_model_call()).count()
    }

    pub fn events(&self) -> Vec<RunEvent> {
        self.lock().events.clone()
    }

    pub fn events_from(&self, from_seq: u64) -> Vec<RunEvent> {
        self.lock()
            .events
            .iter()
            .filter(|e| e.seq >= from_seq)
            .cloned()
            .collect()
    }

    pub fn trace(&self) -> UncertaintyTrace {
        let mut t = self.lock().trace.clone();
        t.run_id = self.run_id.clone();
        t
    }
}
