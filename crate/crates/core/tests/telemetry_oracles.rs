//! Trend features against independent oracles.

use clio_core::config::TelemetryConfig;
use clio_core::gateway::{GatewayError, ModelRequest, ModelResponse};
use clio_core::telemetry::{
    addressing_ratio, classify_trace, compare_groups, compute_features, extract_trace_from_transcript, oscillation_count,
    slope_stats, Feature, Regime, TelemetryError, TraceFeatures, UncertaintyEvent, UncertaintyTrace,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Textbook OLS of y on x = 0..n via the normal equations.
fn ols_oracle(ys: &[f64]) -> (f64, f64) {
    let n = ys.len() as f64;
    let xs: Vec<f64> = (0..ys.len()).map(|i| i as f64).collect();
    let sx: f64 = xs.iter().sum();
    let sy: f64 = ys.iter().sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    let intercept = (sy - slope * sx) / n;
    let ssr: f64 = xs.iter().zip(ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let x_bar = sx / n;
    let sxx_c: f64 = xs.iter().map(|x| (x - x_bar).powi(2)).sum();
    let se = (ssr / (n - 2.0) / sxx_c).sqrt();
    (slope, slope / se)
}

#[test]
fn slope_and_t_match_closed_form_on_random_traces() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..60 {
        let n = rng.random_range(3..40);
        let levels: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let (slope, t) = slope_stats(&UncertaintyTrace::from_levels(&levels)).unwrap();
        let (want_slope, want_t) = ols_oracle(&levels);
        assert!((slope - want_slope).abs() < 1e-9, "{slope} vs {want_slope}");
        assert!((t.0 - want_t).abs() < 1e-9, "{} vs {want_t}", t.0);
    }
}

#[test]
fn slope_hand_cases() {
    let (s, t) = slope_stats(&UncertaintyTrace::from_levels(&[0.5, 0.4, 0.3])).unwrap();
    assert!((s + 0.1).abs() < 1e-15);
    assert_eq!(t.0, f64::NEG_INFINITY);
    let (s, t) = slope_stats(&UncertaintyTrace::from_levels(&[0.4, 0.4, 0.4])).unwrap();
    assert_eq!((s, t.0), (0.0, 0.0));
    let levels = [0.2, 0.6, 0.3, 0.7];
    let (s, t) = slope_stats(&UncertaintyTrace::from_levels(&levels)).unwrap();
    // x̄ = 1.5, Sxx = 5, Sxy = 0.6, slope 0.12; residuals ±0.07, ±0.21 give
    // SSR 0.098 and se = sqrt(0.098 / 2 / 5).
    assert!((s - 0.12).abs() < 1e-12);
    assert!((t.0 - 0.12 / 0.0098f64.sqrt()).abs() < 1e-9);
    assert!(matches!(
        slope_stats(&UncertaintyTrace::from_levels(&[0.3])),
        Err(TelemetryError::TooFewEvents(1))
    ));
}

#[test]
fn oscillation_hand_cases() {
    let t = |l: &[f64]| UncertaintyTrace::from_levels(l);
    assert_eq!(oscillation_count(&t(&[0.2, 0.2, 0.2]), 0.05), 0);
    assert_eq!(oscillation_count(&t(&[0.1, 0.9, 0.1, 0.9]), 0.05), 2);
    assert_eq!(oscillation_count(&t(&[0.1, 0.9, 0.1, 0.9]), 1.0), 0);
    // Diffs +0.3, -0.02, +0.3, -0.4: the small step breaks both neighbouring pairs.
    assert_eq!(oscillation_count(&t(&[0.1, 0.4, 0.38, 0.68, 0.28]), 0.05), 1);
    assert_eq!(oscillation_count(&t(&[0.1, 0.9]), 0.0), 0);
}

fn ev(id: &str, level: f64, addresses: &[&str]) -> UncertaintyEvent {
    UncertaintyEvent {
        id: id.into(),
        timestamp: id[1..].parse().unwrap(),
        level,
        description: String::new(),
        addressed_prior_ids: addresses.iter().map(|s| s.to_string()).collect(),
        channel_id: "c0".into(),
    }
}

#[test]
fn addressing_hand_cases() {
    let four = UncertaintyTrace::new(
        "r",
        vec![ev("u0", 0.5, &[]), ev("u1", 0.4, &["u0"]), ev("u2", 0.3, &["u1", "u0"]), ev("u3", 0.2, &["u2"])],
    );
    assert_eq!(addressing_ratio(&four), 0.75);
    assert_eq!(addressing_ratio(&UncertaintyTrace::default()), 1.0);
    assert_eq!(addressing_ratio(&UncertaintyTrace::new("r", vec![ev("u0", 0.5, &[]), ev("u1", 0.5, &[])])), 0.0);
}

fn features_with(value: f64) -> TraceFeatures {
    TraceFeatures {
        initial_uncertainty: value,
        ..compute_features(&UncertaintyTrace::default())
    }
}

#[test]
fn compare_groups_against_reference_values() {
    let cases: [(&[f64], &[f64], f64, f64); 3] = [
        (&[0.8, 0.9], &[0.1, 0.2], 0.010050506338833462, -9.899494936611667),
        (&[0.31, 0.42, 0.55, 0.61], &[0.12, 0.2, 0.33], 0.03776503735133128, -2.067726883709313),
        (&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 2.5, 9.0, 1.0], 0.7651225863679395, 0.23458782266111025),
    ];
    for (c, i, p, d) in cases {
        let c: Vec<_> = c.iter().map(|&v| features_with(v)).collect();
        let i: Vec<_> = i.iter().map(|&v| features_with(v)).collect();
        let r = compare_groups(&c, &i, Feature::InitialUncertainty).unwrap();
        assert!((r.p_value - p).abs() < 1e-9, "{} vs {p}", r.p_value);
        assert!((r.effect_size - d).abs() < 1e-9, "{} vs {d}", r.effect_size);
    }
    // Two samples of equal variance give two degrees of freedom, where the
    // two-sided p value is 1 - |t| / sqrt(t^2 + 2); here t^2 = 98.
    let c: Vec<_> = [0.8, 0.9].map(features_with).to_vec();
    let i: Vec<_> = [0.1, 0.2].map(features_with).to_vec();
    let r = compare_groups(&c, &i, Feature::InitialUncertainty).unwrap();
    assert!((r.p_value - (1.0 - 98f64.sqrt() / 10.0)).abs() < 1e-12);
    assert!((r.effect_size + 98f64.sqrt()).abs() < 1e-9);

    let same: Vec<_> = [0.3, 0.5, 0.7].map(features_with).to_vec();
    let r = compare_groups(&same, &same, Feature::InitialUncertainty).unwrap();
    assert_eq!((r.p_value, r.effect_size), (1.0, 0.0));
    assert!(matches!(
        compare_groups(&same[..1], &same, Feature::InitialUncertainty),
        Err(TelemetryError::TooFewSamples { correct: 1, incorrect: 3 })
    ));
}

/// The four panel shapes: two correct runs that settle, two incorrect ones
/// whose uncertainty climbs.
#[test]
fn panel_shapes_map_to_distinct_regimes() {
    let cfg = TelemetryConfig::default();
    let shapes: [(&str, Vec<f64>, bool); 4] = [
        ("correct, low and falling", vec![0.35, 0.3, 0.28, 0.22, 0.18, 0.12, 0.1], false),
        ("correct, spike then resolved", vec![0.7, 0.95, 0.8, 0.6, 0.45, 0.35], false),
        ("incorrect, low and rising", vec![0.1, 0.12, 0.15, 0.2, 0.22, 0.27, 0.3], true),
        ("incorrect, volatile and rising", vec![0.4, 0.8, 0.5, 0.9, 0.6, 0.95, 0.7, 1.0], true),
    ];
    let mut regimes = Vec::new();
    for (name, levels, incorrect) in shapes {
        let f = compute_features(&UncertaintyTrace::from_levels(&levels));
        let c = classify_trace(&f, &cfg);
        assert_eq!(c.escalate, incorrect, "{name}: {f:?}");
        regimes.push(c.regime);
    }
    assert_eq!(
        regimes,
        [Regime::LowNegative, Regime::AddressedNegative, Regime::LowPositive, Regime::HighPositive]
    );
}

#[test]
fn classification_rule_cases() {
    let cfg = TelemetryConfig::default();
    let f = |slope: f64, mean: f64, osc: usize| TraceFeatures {
        slope,
        mean_level: mean,
        oscillation_count: osc,
        ..compute_features(&UncertaintyTrace::default())
    };
    let c = classify_trace(&f(-0.05, 0.2, 0), &cfg);
    assert_eq!((c.regime, c.escalate), (Regime::LowNegative, false));
    let c = classify_trace(&f(0.04, 0.7, 5), &cfg);
    assert_eq!((c.regime, c.escalate), (Regime::HighPositive, true));
    assert!(classify_trace(&f(-0.02, 0.6, 4), &cfg).escalate);
}

#[test]
fn transcript_extraction_links_addressed_items() {
    let replies = ["uncertainty: 0.6 | which receptor", "uncertainty: 0.3 | receptor is FcRn | addresses: u0, u9"];
    let mut k = 0;
    let trace = extract_trace_from_transcript(
        "imported",
        &["Step one".to_string(), "Step two".to_string()],
        |_r: &ModelRequest| -> Result<ModelResponse, GatewayError> {
            k += 1;
            Ok(ModelResponse::text(replies[k - 1]))
        },
    )
    .unwrap();
    assert_eq!(trace.levels(), [0.6, 0.3]);
    assert_eq!(trace.events[1].addressed_prior_ids, ["u0"]);
    assert_eq!(addressing_ratio(&trace), 0.5);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn reversing_negates_slope(levels in prop::collection::vec(0.0f64..1.0, 2..30)) {
        let (a, _) = slope_stats(&UncertaintyTrace::from_levels(&levels)).unwrap();
        let rev: Vec<f64> = levels.iter().rev().copied().collect();
        let (b, _) = slope_stats(&UncertaintyTrace::from_levels(&rev)).unwrap();
        prop_assert_eq!(a, -b);
    }

    #[test]
    fn constant_levels_have_zero_slope(v in 0.0f64..1.0, n in 2usize..30) {
        let (s, _) = slope_stats(&UncertaintyTrace::from_levels(&vec![v; n])).unwrap();
        prop_assert_eq!(s, 0.0);
    }

    #[test]
    fn oscillation_ignores_offsets(levels in prop::collection::vec(0.0f64..1.0, 0..30), shift in -0.5f64..0.5) {
        // Diffs that sit within rounding of the threshold may flip, so keep
        // the threshold away from every actual diff.
        let eps = 0.05;
        let near = levels.windows(2).any(|w| ((w[1] - w[0]).abs() - eps).abs() < 1e-9);
        prop_assume!(!near);
        let shifted: Vec<f64> = levels.iter().map(|l| l + shift).collect();
        prop_assert_eq!(
            oscillation_count(&UncertaintyTrace::from_levels(&levels), eps),
            oscillation_count(&UncertaintyTrace::from_levels(&shifted), eps)
        );
    }

    #[test]
    fn swapping_groups_flips_effect(
        a in prop::collection::vec(0.0f64..1.0, 2..10),
        b in prop::collection::vec(0.0f64..1.0, 2..10),
    ) {
        let fa: Vec<_> = a.iter().map(|&v| features_with(v)).collect();
        let fb: Vec<_> = b.iter().map(|&v| features_with(v)).collect();
        let x = compare_groups(&fa, &fb, Feature::InitialUncertainty).unwrap();
        let y = compare_groups(&fb, &fa, Feature::InitialUncertainty).unwrap();
        prop_assert!((x.p_value - y.p_value).abs() < 1e-12);
        prop_assert!((x.effect_size + y.effect_size).abs() < 1e-12);
    }

    #[test]
    fn features_are_pure(levels in prop::collection::vec(0.0f64..1.0, 0..20)) {
        let t = UncertaintyTrace::from_levels(&levels);
        prop_assert_eq!(compute_features(&t), compute_features(&t.clone()));
    }
}
