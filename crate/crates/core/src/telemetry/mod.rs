//! Uncertainty traces, trend features, regime classification and group comparison.

pub mod stats;

use std::collections::HashSet;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::TelemetryConfig;
use crate::event::{EventBody, RunEvent};
use crate::gateway::{GatewayError, Message, ModelRequest, ModelResponse, Purpose};
use crate::prompts;
use crate::reply;

pub use stats::TStat;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TelemetryError {
    #[error("need at least 2 events, trace has {0}")]
    TooFewEvents(usize),
    #[error("each group needs at least 2 samples (got {correct} and {incorrect})")]
    TooFewSamples { correct: usize, incorrect: usize },
    #[error("unknown feature {0:?}")]
    UnknownFeature(String),
    #[error("feature {0} has non-finite values")]
    NonFiniteFeature(&'static str),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyEvent {
    pub id: String,
    pub timestamp: u64,
    pub level: f64,
    pub description: String,
    pub addressed_prior_ids: Vec<String>,
    pub channel_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Correct,
    Incorrect,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct UncertaintyTrace {
    pub run_id: String,
    pub events: Vec<UncertaintyEvent>,
    pub outcome: Option<Outcome>,
}

impl UncertaintyTrace {
    pub fn new(run_id: impl Into<String>, mut events: Vec<UncertaintyEvent>) -> Self {
        events.sort_by_key(|e| e.timestamp);
        Self {
            run_id: run_id.into(),
            events,
            outcome: None,
        }
    }

    pub fn from_levels(levels: &[f64]) -> Self {
        let events = levels
            .iter()
            .enumerate()
            .map(|(i, &level)| UncertaintyEvent {
                id: format!("u{i}"),
                timestamp: i as u64,
                level,
                description: String::new(),
                addressed_prior_ids: Vec::new(),
                channel_id: "c0".into(),
            })
            .collect();
        Self::new("synthetic", events)
    }

    pub fn levels(&self) -> Vec<f64> {
        self.events.iter().map(|e| e.level).collect()
    }
}

/// Collects the `uncertainty` events of one run into a time-ordered trace.
pub fn extract_trace(run_id: &str, events: &[RunEvent]) -> UncertaintyTrace {
    let collected = events
        .iter()
        .filter(|e| e.run_id == run_id)
        .filter_map(|e| match &e.body {
            EventBody::Uncertainty {
                id,
                level,
                description,
                addressed_prior_ids,
            } => Some(UncertaintyEvent {
                id: id.clone(),
                timestamp: e.timestamp,
                level: *level,
                description: description.clone(),
                addressed_prior_ids: addressed_prior_ids.clone(),
                channel_id: e.channel_id.clone().unwrap_or_default(),
            }),
            _ => None,
        })
        .collect();
    UncertaintyTrace::new(run_id, collected)
}

/// Builds a trace for a transcript that carries no native uncertainty
/// events, asking the model to extract them one step at a time.
///
/// Each step is shown together with the uncertainties raised so far, so the
/// model can mark which of them the step resolves. Links to unknown or
/// later ids are dropped.
pub fn extract_trace_from_transcript<F>(
    run_id: &str,
    steps: &[String],
    mut call: F,
) -> Result<UncertaintyTrace, TelemetryError>
where
    F: FnMut(&ModelRequest) -> Result<ModelResponse, GatewayError>,
{
    let mut events: Vec<UncertaintyEvent> = Vec::new();
    for (step, text) in steps.iter().enumerate() {
        if text.trim().is_empty() {
            continue;
        }
        let prior: Vec<(String, String, f64)> = events
            .iter()
            .map(|e| (e.id.clone(), e.description.clone(), e.level))
            .collect();
        let req = ModelRequest::new(
            vec![
                Message::system(prompts::TRACE_EXTRACTION_SYSTEM),
                Message::user(prompts::trace_extraction(text, &prior)),
            ],
            0.0,
        )
        .structured()
        .tagged(Purpose::TraceExtraction, "transcript");
        let notes = crate::gateway::structured_call(&req, &mut call, |r| {
            let pairs = reply::key_values(&r.text);
            if pairs.is_empty() && !r.text.trim().eq_ignore_ascii_case("none") {
                return Err("expected `uncertainty:` lines or `none`".to_string());
            }
            reply::parse_uncertainties(&pairs)
        })?;
        for note in notes {
            let known: HashSet<&str> = events.iter().map(|e| e.id.as_str()).collect();
            let addressed = note
                .addresses
                .into_iter()
                .filter(|id| known.contains(id.as_str()))
                .collect();
            let id = format!("u{}", events.len());
            events.push(UncertaintyEvent {
                id,
                timestamp: step as u64,
                level: note.level,
                description: note.description,
                addressed_prior_ids: addressed,
                channel_id: "transcript".into(),
            });
        }
    }
    Ok(UncertaintyTrace::new(run_id, events))
}

pub fn slope_stats(trace: &UncertaintyTrace) -> Result<(f64, TStat), TelemetryError> {
    stats::ols_index_slope(&trace.levels()).ok_or(TelemetryError::TooFewEvents(trace.events.len()))
}

/// Sign changes between consecutive first differences whose magnitudes both exceed `amplitude_eps`.
pub fn oscillation_count(trace: &UncertaintyTrace, amplitude_eps: f64) -> usize {
    let levels = trace.levels();
    let diffs: Vec<f64> = levels.windows(2).map(|w| w[1] - w[0]).collect();
    diffs
        .windows(2)
        .filter(|d| {
            d[0].abs() > amplitude_eps && d[1].abs() > amplitude_eps && (d[0] > 0.0) != (d[1] > 0.0)
        })
        .count()
}

/// Share of raised uncertainties later addressed; 1.0 for an empty trace.
pub fn addressing_ratio(trace: &UncertaintyTrace) -> f64 {
    if trace.events.is_empty() {
        return 1.0;
    }
    let referenced: HashSet<&str> = trace
        .events
        .iter()
        .flat_map(|e| e.addressed_prior_ids.iter().map(String::as_str))
        .collect();
    let addressed = trace
        .events
        .iter()
        .filter(|e| referenced.contains(e.id.as_str()))
        .count();
    addressed as f64 / trace.events.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceFeatures {
    pub initial_uncertainty: f64,
    pub uncertainty_range: f64,
    pub mean_level: f64,
    pub slope: f64,
    pub slope_t_stat: TStat,
    pub oscillation_count: usize,
    pub addressing_ratio: f64,
    pub n_events: usize,
}

pub fn compute_features(trace: &UncertaintyTrace) -> TraceFeatures {
    compute_features_with(trace, TelemetryConfig::default().amplitude_eps)
}

pub fn compute_features_with(trace: &UncertaintyTrace, amplitude_eps: f64) -> TraceFeatures {
    let levels = trace.levels();
    let (slope, t) = stats::ols_index_slope(&levels).unwrap_or((0.0, TStat(0.0)));
    let (lo, hi) = levels
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    TraceFeatures {
        initial_uncertainty: levels.first().copied().unwrap_or(0.0),
        uncertainty_range: if levels.len() < 2 { 0.0 } else { hi - lo },
        mean_level: if levels.is_empty() { 0.0 } else { stats::mean(&levels) },
        slope,
        slope_t_stat: t,
        oscillation_count: oscillation_count(trace, amplitude_eps),
        addressing_ratio: addressing_ratio(trace),
        n_events: levels.len(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    LowNegative,
    AddressedNegative,
    LowPositive,
    HighPositive,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::LowNegative => "low-negative",
            Regime::AddressedNegative => "addressed-negative",
            Regime::LowPositive => "low-positive",
            Regime::HighPositive => "high-positive",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Classification {
    pub regime: Regime,
    pub escalate: bool,
}

/// Mean level at or above the threshold is "high"; the slope sign is the gradient.
/// Escalates on a rising trend or on heavy oscillation.
pub fn classify_trace(features: &TraceFeatures, cfg: &TelemetryConfig) -> Classification {
    let high = features.mean_level >= cfg.high_mean_threshold;
    let rising = features.slope > 0.0;
    let regime = match (high, rising) {
        (false, false) => Regime::LowNegative,
        (true, false) => Regime::AddressedNegative,
        (false, true) => Regime::LowPositive,
        (true, true) => Regime::HighPositive,
    };
    Classification {
        regime,
        escalate: rising || features.oscillation_count >= cfg.oscillation_threshold,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    InitialUncertainty,
    UncertaintyRange,
    MeanLevel,
    Slope,
    SlopeTStat,
    OscillationCount,
    AddressingRatio,
    NEvents,
}

impl Feature {
    pub const ALL: [Feature; 8] = [
        Feature::InitialUncertainty,
        Feature::UncertaintyRange,
        Feature::MeanLevel,
        Feature::Slope,
        Feature::SlopeTStat,
        Feature::OscillationCount,
        Feature::AddressingRatio,
        Feature::NEvents,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Feature::InitialUncertainty => "initial_uncertainty",
            Feature::UncertaintyRange => "uncertainty_range",
            Feature::MeanLevel => "mean_level",
            Feature::Slope => "slope",
            Feature::SlopeTStat => "slope_t_stat",
            Feature::OscillationCount => "oscillation_count",
            Feature::AddressingRatio => "addressing_ratio",
            Feature::NEvents => "n_events",
        }
    }

    pub fn value(self, f: &TraceFeatures) -> f64 {
        match self {
            Feature::InitialUncertainty => f.initial_uncertainty,
            Feature::UncertaintyRange => f.uncertainty_range,
            Feature::MeanLevel => f.mean_level,
            Feature::Slope => f.slope,
            Feature::SlopeTStat => f.slope_t_stat.0,
            Feature::OscillationCount => f.oscillation_count as f64,
            Feature::AddressingRatio => f.addressing_ratio,
            Feature::NEvents => f.n_events as f64,
        }
    }
}

impl FromStr for Feature {
    type Err = TelemetryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Feature::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| TelemetryError::UnknownFeature(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupComparison {
    pub p_value: f64,
    pub effect_size: f64,
}

/// Welch p value and Cohen's d with the sign convention
/// `(mean_incorrect - mean_correct) / pooled_sd`: negative means the
/// correct group is higher.
pub fn compare_groups(
    correct: &[TraceFeatures],
    incorrect: &[TraceFeatures],
    feature: Feature,
) -> Result<GroupComparison, TelemetryError> {
    if correct.len() < 2 || incorrect.len() < 2 {
        return Err(TelemetryError::TooFewSamples {
            correct: correct.len(),
            incorrect: incorrect.len(),
        });
    }
    let c: Vec<f64> = correct.iter().map(|f| feature.value(f)).collect();
    let i: Vec<f64> = incorrect.iter().map(|f| feature.value(f)).collect();
    if c.iter().chain(&i).any(|v| !v.is_finite()) {
        return Err(TelemetryError::NonFiniteFeature(feature.name()));
    }
    Ok(GroupComparison {
        p_value: stats::welch_t_test(&i, &c).p_value,
        effect_size: stats::cohens_d(&i, &c),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::EventBody;

    fn unc(seq: u64, id: &str, level: f64, addressed: &[&str]) -> RunEvent {
        RunEvent {
            seq,
            run_id: "r".into(),
            channel_id: Some("c0".into()),
            body: EventBody::Uncertainty {
                id: id.into(),
                level,
                description: format!("d{seq}"),
                addressed_prior_ids: addressed.iter().map(|s| s.to_string()).collect(),
            },
            timestamp: seq,
            wall_ms: 0,
        }
    }

    #[test]
    fn extract_filters_and_sorts() {
        let other = RunEvent {
            body: EventBody::Confidence {
                state_id: "c0".into(),
                confidence: 0.3,
            },
            ..unc(1, "x", 0.0, &[])
        };
        let t = extract_trace("r", &[unc(5, "b", 0.3, &["a"]), other, unc(2, "a", 0.6, &[])]);
        assert_eq!(t.events.len(), 2);
        assert_eq!(t.events[0].id, "a");
        assert_eq!(t.events[1].addressed_prior_ids, vec!["a"]);
        assert!(extract_trace("r", &[]).events.is_empty());
    }

    #[test]
    fn slope_needs_two_events() {
        let t = UncertaintyTrace::from_levels(&[0.3]);
        assert_eq!(slope_stats(&t), Err(TelemetryError::TooFewEvents(1)));
    }

    #[test]
    fn oscillations() {
        let t = |l: &[f64]| UncertaintyTrace::from_levels(l);
        assert_eq!(oscillation_count(&t(&[0.2, 0.2, 0.2]), 0.05), 0);
        assert_eq!(oscillation_count(&t(&[0.1, 0.9, 0.1, 0.9]), 0.05), 2);
        assert_eq!(oscillation_count(&t(&[0.1, 0.9, 0.1, 0.9]), 1.0), 0);
        assert_eq!(oscillation_count(&t(&[0.1, 0.9]), 0.0), 0);
    }

    #[test]
    fn addressing() {
        let mut t = UncertaintyTrace::from_levels(&[0.5, 0.4, 0.3, 0.2]);
        t.events[1].addressed_prior_ids = vec!["u0".into()];
        t.events[3].addressed_prior_ids = vec!["u1".into(), "u2".into()];
        assert_eq!(addressing_ratio(&t), 0.75);
        assert_eq!(addressing_ratio(&UncertaintyTrace::from_levels(&[])), 1.0);
        assert_eq!(addressing_ratio(&UncertaintyTrace::from_levels(&[0.1, 0.2])), 0.0);
    }

    #[test]
    fn feature_conventions() {
        let f = compute_features(&UncertaintyTrace::from_levels(&[0.6, 0.3]));
        assert_eq!(f.initial_uncertainty, 0.6);
        assert_eq!(f.uncertainty_range, 0.3);
        let empty = compute_features(&UncertaintyTrace::from_levels(&[]));
        assert_eq!(empty.initial_uncertainty, 0.0);
        assert_eq!(empty.uncertainty_range, 0.0);
        assert_eq!(empty.slope, 0.0);
        assert_eq!(empty.oscillation_count, 0);
        assert_eq!(empty.addressing_ratio, 1.0);
        assert_eq!(empty.n_events, 0);
    }

    fn feat(slope: f64, mean: f64, osc: usize) -> TraceFeatures {
        TraceFeatures {
            initial_uncertainty: 0.0,
            uncertainty_range: 0.0,
            mean_level: mean,
            slope,
            slope_t_stat: TStat(0.0),
            oscillation_count: osc,
            addressing_ratio: 1.0,
            n_events: 5,
        }
    }

    #[test]
    fn classification_rules() {
        let cfg = TelemetryConfig::default();
        let c = classify_trace(&feat(-0.05, 0.2, 0), &cfg);
        assert_eq!((c.regime, c.escalate), (Regime::LowNegative, false));
        let c = classify_trace(&feat(0.04, 0.7, 5), &cfg);
        assert_eq!((c.regime, c.escalate), (Regime::HighPositive, true));
        let c = classify_trace(&feat(-0.02, 0.6, 4), &cfg);
        assert!(c.escalate);
    }

    #[test]
    fn compare_needs_two_per_group() {
        let one = vec![feat(0.0, 0.1, 0)];
        let two = vec![feat(0.0, 0.1, 0), feat(0.0, 0.2, 0)];
        assert!(matches!(
            compare_groups(&one, &two, Feature::MeanLevel),
            Err(TelemetryError::TooFewSamples { .. })
        ));
    }

    #[test]
    fn feature_names_round_trip() {
        for f in Feature::ALL {
            assert_eq!(f.name().parse::<Feature>().unwrap(), f);
        }
        assert!("bogus".parse::<Feature>().is_err());
    }

    #[test]
    fn transcript_extraction_links_addressed_prior() {
        let replies = ["uncertainty: 0.6 | which isotype", "uncertainty: 0.3 | resolved via pIgR | addresses: u0, u9"];
        let mut i = 0;
        let t = extract_trace_from_transcript(
            "r",
            &["step one".into(), "step two".into()],
            |_| {
                let r = ModelResponse::text(replies[i]);
                i += 1;
                Ok(r)
            },
        )
        .unwrap();
        assert_eq!(t.levels(), vec![0.6, 0.3]);
        assert_eq!(t.events[1].addressed_prior_ids, vec!["u0"]);
    }
}
