//! The recursive loop against call sequences traced by hand.
//!
//! Every scenario runs with one worker so the log order is fixed. The
//! expected sequences below were written out by walking the loop by hand:
//! evaluation is coverage, completion (only once registered) and confidence;
//! a child costs a self-optimization and a sample; a synthesis costs the
//! merge and a confidence check.

use std::sync::Arc;
use std::time::{Duration, Instant};

use clio_core::cognitive::{call_bound, Engine};
use clio_core::event::EventBody;
use clio_core::gateway::{Gateway, ModelResponse, Purpose, Rule, ScriptedModel};
use clio_core::{ChannelParams, LoopConfig, RunConfig, RunContext, RunMode, SemanticState};

const Q: &str = "Which immunoglobulin crosses the placenta?";

fn params(b: u32, d: u32, tau: f64) -> ChannelParams {
    ChannelParams {
        branching_factor_b: b,
        max_depth_D: d,
        confidence_threshold_tau: tau,
        ..Default::default()
    }
}

/// Low confidence everywhere unless a channel rule says otherwise.
fn model(rules: Vec<Rule>) -> ScriptedModel {
    let mut m = ScriptedModel::new();
    for r in rules {
        m = m.rule(r);
    }
    m.rule(Rule::purpose(Purpose::Coverage).reply("- [ ] isotype\n- [ ] transport"))
        .rule(Rule::purpose(Purpose::Confidence).reply("confidence: 0.1"))
        .rule(Rule::purpose(Purpose::SelfOptimize).reply("no change"))
        .rule(Rule::purpose(Purpose::Sample).reply("answer: IgG"))
        .rule(Rule::purpose(Purpose::Synthesis).reply("answer: IgG"))
}

fn conf(channel: &str, values: &[f64]) -> Rule {
    Rule::purpose(Purpose::Confidence)
        .channel(channel)
        .replies(values.iter().map(|v| format!("confidence: {v}")))
}

fn run(p: ChannelParams, m: ScriptedModel) -> (Arc<RunContext>, SemanticState, Duration) {
    let cfg = RunConfig {
        loop_cfg: LoopConfig {
            params: p.clone(),
            max_parallel_channels: 1,
            ..Default::default()
        },
        ..Default::default()
    };
    let gateway = Arc::new(Gateway::scripted(Arc::new(m)));
    let ctx = RunContext::builder("run-trace", gateway)
        .config(cfg)
        .wall_clock(false)
        .start(Q, RunMode::Single)
        .unwrap();
    let started = Instant::now();
    let answer = Engine::new(ctx.clone()).unwrap().run_channel(Q, p).unwrap();
    (ctx, answer, started.elapsed())
}

fn calls(ctx: &RunContext) -> Vec<String> {
    ctx.events()
        .iter()
        .filter_map(|e| match &e.body {
            EventBody::ModelCall { purpose, .. } => Some(format!("{} {}", e.channel_id.as_deref().unwrap_or("-"), purpose)),
            _ => None,
        })
        .collect()
}

fn check(ctx: &RunContext, p: &ChannelParams, expected: &[&str], elapsed: Duration) {
    assert_eq!(calls(ctx), expected);
    let bound = call_bound(p.branching_factor_b, p.max_depth_D);
    assert!(expected.len() as u64 <= bound.calls, "{} calls over bound {}", expected.len(), bound.calls);
    for e in ctx.events() {
        if let EventBody::Sample { depth, .. } = e.body {
            assert!(depth <= p.max_depth_D + 1);
        }
    }
    clio_core::event::check_log(&ctx.events(), 0).unwrap();
    assert!(elapsed < Duration::from_secs(10));
}

#[test]
fn confident_root_stops_at_once() {
    let p = params(2, 0, 0.8);
    let (ctx, answer, t) = run(p.clone(), model(vec![conf("c0", &[0.9])]));
    check(&ctx, &p, &["c0 coverage", "c0 confidence"], t);
    assert_eq!(answer.id, "c0");
}

#[test]
fn flat_sampling_returns_first_confident_sample() {
    let p = params(2, 0, 0.8);
    let (ctx, answer, t) = run(p.clone(), model(vec![conf("c0.2", &[0.9])]));
    check(
        &ctx,
        &p,
        &[
            "c0 coverage",
            "c0 confidence",
            "c0.1 self_optimize",
            "c0.1 sample",
            "c0.1 coverage",
            "c0.1 confidence",
            "c0.2 self_optimize",
            "c0.2 sample",
            "c0.2 coverage",
            "c0.2 confidence",
        ],
        t,
    );
    assert_eq!(answer.id, "c0.2");
    assert_eq!(answer.depth_d, 1);
}

#[test]
fn empty_union_falls_back_without_a_call() {
    let p = params(1, 1, 0.5);
    let (ctx, answer, t) = run(p.clone(), model(vec![]));
    check(
        &ctx,
        &p,
        &[
            "c0 coverage",
            "c0 confidence",
            "c0.1 self_optimize",
            "c0.1 sample",
            "c0.1 coverage",
            "c0.1 confidence",
            "c0.1.1 self_optimize",
            "c0.1.1 sample",
            "c0.1.1 coverage",
            "c0.1.1 confidence",
        ],
        t,
    );
    assert_eq!(answer.confidence_c, Some(0.0));
    let fallback = ctx
        .events()
        .iter()
        .any(|e| matches!(&e.body, EventBody::Synthesis { fallback: true, inputs, .. } if inputs.is_empty()));
    assert!(fallback);
}

#[test]
fn parent_synthesizes_the_confident_child() {
    let p = params(2, 1, 0.7);
    let m = model(vec![conf("c0", &[0.1, 0.95]), conf("c0.1", &[0.9]), conf("c0.2", &[0.2])]);
    let (ctx, answer, t) = run(p.clone(), m);
    check(
        &ctx,
        &p,
        &[
            "c0 coverage",
            "c0 confidence",
            "c0.1 self_optimize",
            "c0.1 sample",
            "c0.2 self_optimize",
            "c0.2 sample",
            "c0.1 coverage",
            "c0.1 confidence",
            "c0.2 coverage",
            "c0.2 confidence",
            "c0.2.1 self_optimize",
            "c0.2.1 sample",
            "c0.2.1 coverage",
            "c0.2.1 confidence",
            "c0.2.2 self_optimize",
            "c0.2.2 sample",
            "c0.2.2 coverage",
            "c0.2.2 confidence",
            "c0 synthesis",
            "c0 confidence",
        ],
        t,
    );
    assert_eq!(answer.id, "c0#syn");
    assert_eq!(answer.confidence_c, Some(0.95));
    let inputs: Vec<Vec<String>> = ctx
        .events()
        .into_iter()
        .filter_map(|e| match e.body {
            EventBody::Synthesis { inputs, fallback: false, .. } => Some(inputs),
            _ => None,
        })
        .collect();
    assert_eq!(inputs, vec![vec!["c0.1".to_string()]]);
}

#[test]
fn completion_tool_and_flat_hit_merge() {
    let p = params(3, 1, 0.6);
    let m = model(vec![
        conf("c0", &[0.3, 0.9]),
        conf("c0.1.1", &[0.7]),
        Rule::purpose(Purpose::Coverage).channel("c0.3").reply("- [x] isotype\n- [x] transport"),
        Rule::purpose(Purpose::Completion)
            .channel("c0.3")
            .reply(clio_core::gateway::FixtureResponse::Full {
                text: String::new(),
                tool_invocation: ModelResponse::tool("complete", serde_json::json!({"rationale": "settled"})).tool_invocation,
            }),
        Rule::purpose(Purpose::Confidence).reply("confidence: 0.3"),
    ]);
    let (ctx, answer, t) = run(p.clone(), m);
    let mut expected = vec![
        "c0 coverage",
        "c0 confidence",
        "c0.1 self_optimize",
        "c0.1 sample",
        "c0.2 self_optimize",
        "c0.2 sample",
        "c0.3 self_optimize",
        "c0.3 sample",
        "c0.1 coverage",
        "c0.1 confidence",
        "c0.1.1 self_optimize",
        "c0.1.1 sample",
        "c0.1.1 coverage",
        "c0.1.1 confidence",
        "c0.2 coverage",
        "c0.2 confidence",
    ];
    for k in ["c0.2.1", "c0.2.2", "c0.2.3"] {
        for what in ["self_optimize", "sample", "coverage", "confidence"] {
            expected.push(Box::leak(format!("{k} {what}").into_boxed_str()));
        }
    }
    expected.extend(["c0.3 coverage", "c0.3 completion", "c0 synthesis", "c0 confidence"]);
    check(&ctx, &p, &expected, t);
    assert_eq!(expected.len(), 32);
    assert_eq!(answer.id, "c0#syn");
    let inputs = ctx.events().into_iter().find_map(|e| match e.body {
        EventBody::Synthesis { inputs, .. } => Some(inputs),
        _ => None,
    });
    assert_eq!(inputs, Some(vec!["c0.1.1".to_string(), "c0.3".to_string()]));
}

#[test]
fn confident_synthesis_travels_up_two_levels() {
    let p = params(1, 2, 0.5);
    let m = model(vec![conf("c0", &[0.1, 0.9]), conf("c0.1", &[0.1, 0.8]), conf("c0.1.1", &[0.6])]);
    let (ctx, answer, t) = run(p.clone(), m);
    check(
        &ctx,
        &p,
        &[
            "c0 coverage",
            "c0 confidence",
            "c0.1 self_optimize",
            "c0.1 sample",
            "c0.1 coverage",
            "c0.1 confidence",
            "c0.1.1 self_optimize",
            "c0.1.1 sample",
            "c0.1.1 coverage",
            "c0.1.1 confidence",
            "c0.1 synthesis",
            "c0.1 confidence",
            "c0 synthesis",
            "c0 confidence",
        ],
        t,
    );
    assert_eq!(answer.id, "c0#syn");
    let c0_inputs = ctx.events().into_iter().rev().find_map(|e| match e.body {
        EventBody::Synthesis { inputs, .. } => Some(inputs),
        _ => None,
    });
    assert_eq!(c0_inputs, Some(vec!["c0.1#syn".to_string()]));
}

#[test]
fn exhaustive_low_confidence_tree() {
    // Every state evaluated, nothing qualifies: 15 states at two calls each,
    // 14 children at two calls each, and three fallback syntheses for free.
    let p = params(2, 2, 0.9);
    let (ctx, _, t) = run(p.clone(), model(vec![]));
    let log = calls(&ctx);
    assert_eq!(log.len(), 15 * 2 + 14 * 2);
    let depths: Vec<u32> = ctx
        .events()
        .iter()
        .filter_map(|e| match e.body {
            EventBody::Sample { depth, .. } => Some(depth),
            _ => None,
        })
        .collect();
    assert_eq!(depths.iter().max(), Some(&3));
    check(&ctx, &p, &log.iter().map(String::as_str).collect::<Vec<_>>(), t);
}

#[test]
fn child_context_is_fresh() {
    let p = params(1, 1, 0.99);
    let m = model(vec![Rule::purpose(Purpose::Sample).channel("c0.1").reply("secret-sibling-thought")]);
    let (ctx, _, _) = run(p, m);
    let gateway_reqs: Vec<String> = ctx
        .events()
        .iter()
        .filter_map(|e| match &e.body {
            EventBody::ModelCall { purpose, messages, .. } if purpose == "sample" && e.channel_id.as_deref() == Some("c0.1.1") => {
                Some(messages.iter().map(|m| m.content.clone()).collect::<Vec<_>>().join("\n"))
            }
            _ => None,
        })
        .collect();
    assert_eq!(gateway_reqs.len(), 1);
    // The parent summary is carried; nothing else from other channels is.
    assert!(gateway_reqs[0].contains("secret-sibling-thought"));
    assert!(gateway_reqs[0].contains(Q));
}
