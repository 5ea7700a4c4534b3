//! Run lifecycle service: creates runs, persists their event logs, streams
//! events and accepts steering commands over HTTP.

pub mod exec;
pub mod http;
pub mod record;
pub mod service;
pub mod store;

use clio_core::config::InvalidConfig;
use clio_core::run::RunError;
use thiserror::Error;

pub use exec::{backend_from_env, execute_attempt, fixture_backend, GatewayFactory};
pub use record::RunRecord;
pub use service::{CreateRun, EventCursor, Service, ServiceOptions, SteerAck, SteerAction, SteeringCommand, View};
pub use store::{RunStore, StoreError};

pub const ENV_LISTEN: &str = "CLIO_LISTEN";
pub const ENV_DATA_DIR: &str = "CLIO_DATA_DIR";
pub const ENV_UI_DIR: &str = "CLIO_UI_DIR";
pub const DEFAULT_LISTEN: &str = "127.0.0.1:8080";

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("unknown run {0}")]
    UnknownRun(String),
    #[error("unknown channel {0}")]
    UnknownChannel(String),
    #[error("illegal state: {0}")]
    IllegalState(String),
    #[error("view unavailable: {0}")]
    ViewUnavailable(String),
    #[error(transparent)]
    InvalidConfig(#[from] InvalidConfig),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("model backend unavailable: {0}")]
    Backend(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Run(RunError),
}

impl From<RunError> for ServiceError {
    fn from(e: RunError) -> Self {
        match e {
            RunError::UnknownChannel(c) => ServiceError::UnknownChannel(c),
            RunError::IllegalState(s) => ServiceError::IllegalState(s),
            RunError::InvalidConfig(c) => ServiceError::InvalidConfig(c),
            RunError::State(s) => ServiceError::InvalidRequest(s.to_string()),
            other => ServiceError::Run(other),
        }
    }
}

impl ServiceError {
    /// Stable machine-readable error code.
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::UnknownRun(_) => "unknown_run",
            ServiceError::UnknownChannel(_) => "unknown_channel",
            ServiceError::IllegalState(_) => "illegal_state",
            ServiceError::ViewUnavailable(_) => "view_unavailable",
            ServiceError::InvalidConfig(_) => "invalid_config",
            ServiceError::InvalidRequest(_) => "invalid_request",
            ServiceError::Backend(_) => "backend_unavailable",
            ServiceError::Store(_) => "store_error",
            ServiceError::Run(_) => "run_error",
        }
    }
}
