//! The per-run summary record, folded from the event log.

use clio_core::event::{fold_status, EventBody, RunEvent, RunStatus};
use clio_core::{RunConfig, RunMode, SCHEMA_VERSION};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema_version: u32,
    pub run_id: String,
    pub question: String,
    pub mode: RunMode,
    pub config: RunConfig,
    pub status: RunStatus,
    pub answer: Option<String>,
    pub error: Option<String>,
    /// Execution attempt; each resume of a terminated run starts a new one.
    pub attempt: u32,
    /// `wall_ms` of the `created` event.
    pub created_at: u64,
    /// `wall_ms` of the last event that changed this record.
    pub updated_at: u64,
}

impl RunRecord {
    /// Starts a record from a `created` event.
    pub fn from_created(event: &RunEvent) -> Option<Self> {
        let EventBody::Created { question, mode, config } = &event.body else {
            return None;
        };
        Some(Self {
            schema_version: SCHEMA_VERSION,
            run_id: event.run_id.clone(),
            question: question.clone(),
            mode: *mode,
            config: config.clone(),
            status: RunStatus::Running,
            answer: None,
            error: None,
            attempt: 0,
            created_at: event.wall_ms,
            updated_at: event.wall_ms,
        })
    }

    /// Applies one event; true when the record changed.
    pub fn apply(&mut self, event: &RunEvent) -> bool {
        let before = (self.status, self.answer.clone(), self.error.clone(), self.attempt);
        if let Some(status) = fold_status(std::iter::once(event)) {
            self.status = status;
        }
        let run_scoped = event.channel_id.is_none();
        match &event.body {
            EventBody::Answer { text, .. } if run_scoped => self.answer = Some(text.clone()),
            EventBody::Failure { error } if run_scoped => self.error = Some(error.clone()),
            EventBody::Resume { attempt, .. } => {
                self.attempt = *attempt;
                self.error = None;
            }
            _ => {}
        }
        let changed = before != (self.status, self.answer.clone(), self.error.clone(), self.attempt);
        if changed {
            self.updated_at = event.wall_ms;
        }
        changed
    }

    /// Rebuilds the record from a full log. `None` when the log does not start with `created`.
    pub fn fold(events: &[RunEvent]) -> Option<Self> {
        let (first, rest) = events.split_first()?;
        let mut record = Self::from_created(first)?;
        for e in rest {
            record.apply(e);
        }
        Some(record)
    }
}
