//! Run configuration blocks as they appear in run-request JSON.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::state::{ChannelParams, StateError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid configuration: {}", .0.iter().map(|e| format!("{}: {}", e.field, e.message)).collect::<Vec<_>>().join("; "))]
pub struct InvalidConfig(pub Vec<FieldError>);

impl InvalidConfig {
    pub fn names(&self, field: &str) -> bool {
        self.0.iter().any(|e| e.field == field)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    Single,
    #[serde(alias = "more-thinking")]
    MoreThinking,
}

/// Bounds and scheduling for the recursive loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoopConfig {
    #[serde(flatten)]
    pub params: ChannelParams,
    /// Base temperature for spawned children before self-optimization.
    pub child_temperature: f64,
    #[serde(alias = "budget")]
    pub call_budget: usize,
    pub max_parallel_channels: usize,
    pub pause_on_escalation: bool,
    /// Characters of the parent thought carried into a child context.
    pub summary_chars: usize,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            params: ChannelParams::default(),
            child_temperature: 1.0,
            call_budget: 500,
            max_parallel_channels: 4,
            pause_on_escalation: false,
            summary_chars: 1200,
        }
    }
}

impl LoopConfig {
    fn collect_errors(&self, out: &mut Vec<FieldError>) {
        if let Err(StateError::InvalidParam { field, message }) = self.params.validate() {
            out.push(FieldError {
                field: field.to_string(),
                message,
            });
        }
        if !(0.0..=crate::state::MAX_TEMPERATURE).contains(&self.child_temperature) {
            out.push(FieldError {
                field: "child_temperature".into(),
                message: format!("{} is outside [0, 2]", self.child_temperature),
            });
        }
        if self.call_budget == 0 {
            out.push(FieldError {
                field: "call_budget".into(),
                message: "must be positive".into(),
            });
        }
        if self.max_parallel_channels == 0 {
            out.push(FieldError {
                field: "max_parallel_channels".into(),
                message: "must be positive".into(),
            });
        }
    }

    pub fn validate(&self) -> Result<(), InvalidConfig> {
        let mut errors = Vec::new();
        self.collect_errors(&mut errors);
        if errors.is_empty() {
            Ok(())
        } else {
            Err(InvalidConfig(errors))
        }
    }
}

/// Ensembling settings: `M` sampled chains, `f` DRIFT folds, `u` follow-ups per fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MoreThinkingConfig {
    #[serde(rename = "M")]
    pub chains: usize,
    #[serde(rename = "f")]
    pub folds: usize,
    #[serde(rename = "u")]
    pub follow_ups: usize,
    /// One per chain; empty means evenly spaced over [0.5, 1.3].
    pub temperatures: Vec<f64>,
    pub top_k_communities: usize,
    pub top_k_nodes: usize,
}

impl Default for MoreThinkingConfig {
    fn default() -> Self {
        Self {
            chains: 5,
            folds: 2,
            follow_ups: 3,
            temperatures: Vec::new(),
            top_k_communities: 5,
            top_k_nodes: 8,
        }
    }
}

impl MoreThinkingConfig {
    pub fn chain_temperatures(&self) -> Vec<f64> {
        if !self.temperatures.is_empty() {
            return self.temperatures.clone();
        }
        match self.chains {
            0 => Vec::new(),
            1 => vec![0.9],
            m => (0..m)
                .map(|i| 0.5 + 0.8 * i as f64 / (m - 1) as f64)
                .collect(),
        }
    }

    fn collect_errors(&self, out: &mut Vec<FieldError>) {
        for (field, v) in [("M", self.chains), ("f", self.folds), ("u", self.follow_ups)] {
            if v == 0 {
                out.push(FieldError {
                    field: field.into(),
                    message: "must be at least 1".into(),
                });
            }
        }
        if !self.temperatures.is_empty() && self.temperatures.len() != self.chains {
            out.push(FieldError {
                field: "temperatures".into(),
                message: format!(
                    "expected {} temperatures, got {}",
                    self.chains,
                    self.temperatures.len()
                ),
            });
        }
        if self
            .temperatures
            .iter()
            .any(|t| !(0.0..=crate::state::MAX_TEMPERATURE).contains(t))
        {
            out.push(FieldError {
                field: "temperatures".into(),
                message: "every temperature must lie in [0, 2]".into(),
            });
        }
        if self.top_k_communities == 0 || self.top_k_nodes == 0 {
            out.push(FieldError {
                field: "top_k".into(),
                message: "retrieval sizes must be positive".into(),
            });
        }
    }

    pub fn validate(&self) -> Result<(), InvalidConfig> {
        let mut errors = Vec::new();
        self.collect_errors(&mut errors);
        if errors.is_empty() {
            Ok(())
        } else {
            Err(InvalidConfig(errors))
        }
    }
}

/// Thresholds for trend features and escalation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TelemetryConfig {
    pub amplitude_eps: f64,
    pub high_mean_threshold: f64,
    pub oscillation_threshold: usize,
}

impl Default for TelemetryConfig {
    fn default() -> Self {
        Self {
            amplitude_eps: 0.05,
            high_mean_threshold: 0.5,
            oscillation_threshold: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    #[serde(rename = "loop")]
    pub loop_cfg: LoopConfig,
    pub more_thinking: MoreThinkingConfig,
    pub telemetry: TelemetryConfig,
}

impl RunConfig {
    pub fn validate(&self, mode: RunMode) -> Result<(), InvalidConfig> {
        let mut errors = Vec::new();
        self.loop_cfg.collect_errors(&mut errors);
        if mode == RunMode::MoreThinking {
            self.more_thinking.collect_errors(&mut errors);
        }
        if self.telemetry.amplitude_eps < 0.0 {
            errors.push(FieldError {
                field: "amplitude_eps".into(),
                message: "must be non-negative".into(),
            });
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(InvalidConfig(errors))
        }
    }
}
