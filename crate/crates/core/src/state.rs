//! Semantic states and the parameters a thought channel runs under.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StateError {
    #[error("question is empty")]
    EmptyQuestion,
    #[error("invalid channel parameter {field}: {message}")]
    InvalidParam { field: &'static str, message: String },
}

/// Editable strategy of one thought channel.
///
/// `persona`, `focus` and `temperature` are what self-optimization may
/// rewrite; the three search bounds may only shrink.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct ChannelParams {
    #[serde(default)]
    pub persona: String,
    #[serde(default)]
    pub focus: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(alias = "b", default = "default_b")]
    pub branching_factor_b: u32,
    #[serde(alias = "D", default = "default_d")]
    pub max_depth_D: u32,
    #[serde(alias = "tau", default = "default_tau")]
    pub confidence_threshold_tau: f64,
    #[serde(default = "default_coverage")]
    pub coverage_threshold: f64,
}

fn default_temperature() -> f64 {
    0.7
}
fn default_b() -> u32 {
    3
}
fn default_d() -> u32 {
    2
}
fn default_tau() -> f64 {
    0.85
}
fn default_coverage() -> f64 {
    0.8
}

/// Upper end of the temperature range accepted by OpenAI-compatible providers.
pub const MAX_TEMPERATURE: f64 = 2.0;

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            persona: String::new(),
            focus: String::new(),
            temperature: default_temperature(),
            branching_factor_b: default_b(),
            max_depth_D: default_d(),
            confidence_threshold_tau: default_tau(),
            coverage_threshold: default_coverage(),
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<(), StateError> {
        let unit = |field: &'static str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(StateError::InvalidParam {
                    field,
                    message: format!("{v} is outside [0, 1]"),
                })
            }
        };
        if self.branching_factor_b < 1 {
            return Err(StateError::InvalidParam {
                field: "branching_factor_b",
                message: "must be at least 1".into(),
            });
        }
        if !(0.0..=MAX_TEMPERATURE).contains(&self.temperature) {
            return Err(StateError::InvalidParam {
                field: "temperature",
                message: format!("{} is outside [0, {MAX_TEMPERATURE}]", self.temperature),
            });
        }
        unit("confidence_threshold_tau", self.confidence_threshold_tau)?;
        unit("coverage_threshold", self.coverage_threshold)
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }
}

/// One sub-question of a channel's coverage checklist.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChecklistItem {
    pub description: String,
    pub addressed: bool,
}

/// Self-generated checklist whose addressed fraction gates completion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageChecklist {
    pub items: Vec<ChecklistItem>,
    pub generated_at_depth: u32,
}

impl CoverageChecklist {
    pub fn coverage(&self) -> f64 {
        if self.items.is_empty() {
            return 0.0;
        }
        let addressed = self.items.iter().filter(|i| i.addressed).count();
        addressed as f64 / self.items.len() as f64
    }
}

/// An uncertainty the channel has raised and not yet seen addressed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenUncertainty {
    pub id: String,
    pub description: String,
    pub level: f64,
}

/// One node of thought.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticState {
    pub id: String,
    pub question: String,
    pub thought: String,
    pub params: ChannelParams,
    pub depth_d: u32,
    pub confidence_c: Option<f64>,
    pub coverage: Option<f64>,
    pub completion_registered: bool,
    pub parent_id: Option<String>,
    /// Logical timestamp: the run's event sequence number when the state was created.
    pub created_at: u64,
    #[serde(default)]
    pub checklist: Option<CoverageChecklist>,
    #[serde(default)]
    pub open_uncertainties: Vec<OpenUncertainty>,
    #[serde(default)]
    pub terminal: bool,
}

impl SemanticState {
    pub fn is_root(&self) -> bool {
        self.parent_id.is_none()
    }

    /// Leading part of the thought, used as the parent summary in child contexts.
    pub fn summary(&self, max_chars: usize) -> String {
        let thought = self.thought.trim();
        match thought.char_indices().nth(max_chars) {
            None => thought.to_string(),
            Some((cut, _)) => format!("{}…", &thought[..cut]),
        }
    }

    /// True when this state qualifies for an early return.
    pub fn qualifies(&self) -> bool {
        self.terminal
            || self
                .confidence_c
                .is_some_and(|c| c >= self.params.confidence_threshold_tau)
    }
}

/// Renders the initial thought of a channel from the question and its framing.
pub fn render_initial_thought(question: &str, params: &ChannelParams) -> String {
    let mut out = String::new();
    if !params.persona.trim().is_empty() {
        out.push_str(&format!("Persona: {}\n", params.persona.trim()));
    }
    if !params.focus.trim().is_empty() {
        out.push_str(&format!("Focus: {}\n", params.focus.trim()));
    }
    out.push_str("Question: ");
    out.push_str(question.trim());
    out
}

/// Maps a question to the root state of a run.
pub fn init_state(
    question: &str,
    params: ChannelParams,
    id: impl Into<String>,
    created_at: u64,
) -> Result<SemanticState, StateError> {
    if question.trim().is_empty() {
        return Err(StateError::EmptyQuestion);
    }
    params.validate()?;
    Ok(SemanticState {
        id: id.into(),
        question: question.trim().to_string(),
        thought: render_initial_thought(question, &params),
        params,
        depth_d: 0,
        confidence_c: None,
        coverage: None,
        completion_registered: false,
        parent_id: None,
        created_at,
        checklist: None,
        open_uncertainties: Vec::new(),
        terminal: false,
    })
}

/// What one call of the recursive loop hands back to its parent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelResult {
    /// States that stopped on completion or confidence. May be empty.
    pub states: Vec<SemanticState>,
    pub synthesized: Option<SemanticState>,
    pub call_count: usize,
}

impl ChannelResult {
    /// The state a driver should treat as the channel's answer.
    pub fn answer(&self) -> Option<&SemanticState> {
        self.synthesized.as_ref().or_else(|| self.states.first())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_state_builds_root() {
        let s = init_state("What is 2+2?", ChannelParams::default(), "c0", 0).unwrap();
        assert_eq!(s.depth_d, 0);
        assert!(s.parent_id.is_none());
        assert!(s.confidence_c.is_none());
        assert!(s.coverage.is_none());
        assert!(!s.completion_registered);
        assert!(s.thought.contains("What is 2+2?"));
    }

    #[test]
    fn blank_question_rejected() {
        assert_eq!(
            init_state("", ChannelParams::default(), "c0", 0),
            Err(StateError::EmptyQuestion)
        );
        assert_eq!(
            init_state("  \n\t", ChannelParams::default(), "c0", 0),
            Err(StateError::EmptyQuestion)
        );
    }

    #[test]
    fn persona_framing_in_thought() {
        let params = ChannelParams {
            persona: "immunologist".into(),
            ..Default::default()
        };
        let s = init_state("Which antibody crosses the placenta?", params, "c0", 0).unwrap();
        assert!(s.thought.contains("immunologist"));
    }

    #[test]
    fn init_state_deterministic_except_id_and_time() {
        let p = ChannelParams {
            focus: "isotypes".into(),
            ..Default::default()
        };
        let a = init_state("Q?", p.clone(), "a", 1).unwrap();
        let mut b = init_state("Q?", p, "b", 9).unwrap();
        b.id = a.id.clone();
        b.created_at = a.created_at;
        assert_eq!(a, b);
    }

    #[test]
    fn params_validation_names_field() {
        let p = ChannelParams {
            branching_factor_b: 0,
            ..Default::default()
        };
        match p.validate() {
            Err(StateError::InvalidParam { field, .. }) => assert_eq!(field, "branching_factor_b"),
            other => panic!("unexpected {other:?}"),
        }
        let p = ChannelParams {
            confidence_threshold_tau: 1.5,
            ..Default::default()
        };
        assert!(p.validate().is_err());
    }

    #[test]
    fn params_accept_short_aliases() {
        let p: ChannelParams = serde_json::from_str(r#"{"b":2,"D":1,"tau":0.9}"#).unwrap();
        assert_eq!(p.branching_factor_b, 2);
        assert_eq!(p.max_depth_D, 1);
        assert_eq!(p.confidence_threshold_tau, 0.9);
        assert_eq!(p.coverage_threshold, 0.8);
    }

    #[test]
    fn checklist_coverage() {
        let c = CoverageChecklist {
            items: (0..4)
                .map(|i| ChecklistItem {
                    description: format!("q{i}"),
                    addressed: i < 3,
                })
                .collect(),
            generated_at_depth: 0,
        };
        assert_eq!(c.coverage(), 0.75);
    }
}
