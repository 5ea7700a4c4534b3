//! The run event log record.
//!
//! One JSON object per event:
//!
//! ```json
//! {"seq": 4, "run_id": "run-000001", "channel_id": "c0.1", "kind": "sample",
//!  "payload": {"state_id": "c0.1", ...}, "timestamp": 4, "wall_ms": 1718000000000}
//! ```
//!
//! `timestamp` is the run's logical clock (equal to `seq`); `wall_ms` is
//! wall-clock time for display only. Run-scoped events have `channel_id: null`.
//!
//! Run status is never stored; it is folded from the log (see [`fold_status`]).

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::{RunConfig, RunMode};
use crate::gateway::{Message, ToolInvocation};
use crate::state::ChannelParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    AwaitingUser,
    Completed,
    Terminated,
    Failed,
}

impl RunStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, RunStatus::Completed | RunStatus::Terminated | RunStatus::Failed)
    }

    /// Allowed lifecycle edges. Resuming a terminated run re-enters `running`.
    pub fn can_transition_to(self, next: RunStatus) -> bool {
        use RunStatus::*;
        matches!(
            (self, next),
            (Running, AwaitingUser)
                | (AwaitingUser, Running)
                | (Running, Completed)
                | (Running, Terminated)
                | (Running, Failed)
                | (AwaitingUser, Terminated)
                | (AwaitingUser, Failed)
                | (Terminated, Running)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelRole {
    Root,
    Child,
    Flat,
    Chain,
    Graph,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum EventBody {
    Created {
        question: String,
        mode: RunMode,
        config: RunConfig,
    },
    Spawn {
        parent_id: Option<String>,
        depth: u32,
        role: ChannelRole,
        params: Option<ChannelParams>,
    },
    ModelCall {
        purpose: String,
        messages: Vec<Message>,
        temperature: f64,
        response_text: String,
        #[serde(default)]
        tool_invocation: Option<ToolInvocation>,
    },
    SelfOptimize {
        old: ChannelParams,
        new: ChannelParams,
    },
    Sample {
        state_id: String,
        parent_id: String,
        depth: u32,
        thought: String,
    },
    Coverage {
        state_id: String,
        coverage: f64,
        addressed: usize,
        total: usize,
        registered: bool,
    },
    Completion {
        state_id: String,
        terminal: bool,
        rationale: String,
    },
    Confidence {
        state_id: String,
        confidence: f64,
    },
    Uncertainty {
        id: String,
        level: f64,
        description: String,
        addressed_prior_ids: Vec<String>,
    },
    Synthesis {
        state_id: String,
        inputs: Vec<String>,
        thought: String,
        confidence: f64,
        fallback: bool,
    },
    Interjection {
        scope: Option<String>,
        message: String,
    },
    Terminate {
        scope: Option<String>,
        reason: String,
    },
    Resume {
        message: Option<String>,
        attempt: u32,
    },
    Escalation {
        regime: String,
        escalate: bool,
        paused: bool,
    },
    Graph {
        stage: String,
        detail: Value,
    },
    Failure {
        error: String,
    },
    Answer {
        state_id: Option<String>,
        text: String,
        confidence: Option<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Created,
    Spawn,
    ModelCall,
    SelfOptimize,
    Sample,
    Coverage,
    Completion,
    Confidence,
    Uncertainty,
    Synthesis,
    Interjection,
    Terminate,
    Resume,
    Escalation,
    Graph,
    Failure,
    Answer,
}

impl EventBody {
    pub fn kind(&self) -> EventKind {
        match self {
            EventBody::Created { .. } => EventKind::Created,
            EventBody::Spawn { .. } => EventKind::Spawn,
            EventBody::ModelCall { .. } => EventKind::ModelCall,
            EventBody::SelfOptimize { .. } => EventKind::SelfOptimize,
            EventBody::Sample { .. } => EventKind::Sample,
            EventBody::Coverage { .. } => EventKind::Coverage,
            EventBody::Completion { .. } => EventKind::Completion,
            EventBody::Confidence { .. } => EventKind::Confidence,
            EventBody::Uncertainty { .. } => EventKind::Uncertainty,
            EventBody::Synthesis { .. } => EventKind::Synthesis,
            EventBody::Interjection { .. } => EventKind::Interjection,
            EventBody::Terminate { .. } => EventKind::Terminate,
            EventBody::Resume { .. } => EventKind::Resume,
            EventBody::Escalation { .. } => EventKind::Escalation,
            EventBody::Graph { .. } => EventKind::Graph,
            EventBody::Failure { .. } => EventKind::Failure,
            EventBody::Answer { .. } => EventKind::Answer,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEvent {
    pub seq: u64,
    pub run_id: String,
    pub channel_id: Option<String>,
    #[serde(flatten)]
    pub body: EventBody,
    pub timestamp: u64,
    #[serde(default)]
    pub wall_ms: u64,
}

impl RunEvent {
    pub fn kind(&self) -> EventKind {
        self.body.kind()
    }

    pub fn is_model_call(&self) -> bool {
        matches!(self.body, EventBody::ModelCall { .. })
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("event serializes")
    }
}

/// Folds run status from events: `created` starts a run, an escalation that
/// paused it means awaiting the user, `resume` re-enters running, and the
/// run-scoped `terminate`, `answer` and `failure` events end it.
pub fn fold_status<'a>(events: impl IntoIterator<Item = &'a RunEvent>) -> Option<RunStatus> {
    let mut status = None;
    for e in events {
        let run_scoped = e.channel_id.is_none();
        status = match (&e.body, run_scoped) {
            (EventBody::Created { .. }, _) => Some(RunStatus::Running),
            (EventBody::Escalation { paused: true, .. }, _) => Some(RunStatus::AwaitingUser),
            (EventBody::Resume { .. }, _) => Some(RunStatus::Running),
            (EventBody::Terminate { scope: None, .. }, _) => Some(RunStatus::Terminated),
            (EventBody::Answer { .. }, true) => Some(RunStatus::Completed),
            (EventBody::Failure { .. }, true) => Some(RunStatus::Failed),
            _ => status,
        };
    }
    status
}

/// True when `channel` is `scope` or lies in its subtree.
pub fn in_scope(channel: &str, scope: &str) -> bool {
    channel == scope
        || (channel.len() > scope.len()
            && channel.starts_with(scope)
            && channel.as_bytes()[scope.len()] == b'.')
}

/// Checks the structural log invariants: gapless sequence from `first_seq`
/// and no reference to a channel before its spawn.
pub fn check_log(events: &[RunEvent], first_seq: u64) -> Result<(), String> {
    let mut spawned = std::collections::HashSet::new();
    for (i, e) in events.iter().enumerate() {
        let expected = first_seq + i as u64;
        if e.seq != expected {
            return Err(format!("event {i} has seq {} (expected {expected})", e.seq));
        }
        if let Some(ch) = &e.channel_id {
            if e.kind() == EventKind::Spawn {
                spawned.insert(ch.clone());
            } else if !spawned.contains(ch) {
                return Err(format!("seq {}: channel {ch} used before spawn", e.seq));
            }
        }
    }
    Ok(())
}
