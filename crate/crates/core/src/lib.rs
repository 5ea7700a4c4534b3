//! Recursive, confidence-gated reasoning over a chat model.
//!
//! The crate is split along the engine's responsibilities:
//!
//! * [`state`] – semantic states, channel parameters and the question → state mapping.
//! * [`event`] / [`run`] – the append-only run event log and the per-run steering mailbox.
//! * [`gateway`] – chat-completion and embedding providers (remote and scripted).
//! * [`cognitive`] – the recursive exploration loop.
//! * [`graph`] – chain ensembling into a knowledge graph, clustering and DRIFT search.
//! * [`telemetry`] – uncertainty traces, trend features and escalation.

pub mod cognitive;
pub mod config;
pub mod event;
pub mod gateway;
pub mod graph;
pub mod prompts;
pub mod reply;
pub mod run;
pub mod state;
pub mod sync;
pub mod telemetry;

pub use config::{LoopConfig, MoreThinkingConfig, RunConfig, RunMode, TelemetryConfig};
pub use event::{EventBody, EventKind, RunEvent};
pub use run::RunContext;
pub use state::{ChannelParams, ChannelResult, SemanticState};

/// Version stamped on every exported JSON document.
pub const SCHEMA_VERSION: u32 = 1;
