//! The ensemble pipeline end to end on a scripted model.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use clio_core::cognitive::Engine;
use clio_core::event::{EventBody, RunStatus};
use clio_core::gateway::{Gateway, Purpose, Rule, ScriptedModel};
use clio_core::graph::more_thinking;
use clio_core::{ChannelParams, LoopConfig, MoreThinkingConfig, RunConfig, RunContext, RunMode};

const Q: &str = "Which antibody isotype crosses the human placenta?";

fn scripted() -> ScriptedModel {
    let mut m = ScriptedModel::new();
    for (chain, token) in [("m0", "ALPHA"), ("m1", "BETA"), ("m2", "GAMMA")] {
        m = m
            .rule(Rule::purpose(Purpose::Confidence).channel(chain).reply("confidence: 0.2"))
            .rule(Rule::purpose(Purpose::Sample).subtree(chain).reply(format!("{token}: thinking about isotypes")));
    }
    m.rule(Rule::purpose(Purpose::Extraction).containing("ALPHA").reply(
        "entity: IgG | protein | crosses the placenta\nentity: FcRn | receptor\nrelation: IgG | FcRn | binds | 0.9",
    ))
    .rule(Rule::purpose(Purpose::Extraction).containing("BETA").reply(
        "entity: IgA | protein\nentity: pIgR | receptor\nrelation: IgA | pIgR | transported by",
    ))
    .rule(Rule::purpose(Purpose::Extraction).containing("GAMMA").reply(
        "entity: IgG | protein\nentity: placenta | tissue\nrelation: IgG | placenta | crosses",
    ))
    .rule(Rule::purpose(Purpose::Coverage).reply("- [ ] isotype\n- [x] route"))
    .rule(Rule::purpose(Purpose::Confidence).reply("confidence: 0.9"))
    .rule(Rule::purpose(Purpose::SelfOptimize).reply("no change"))
    .rule(Rule::purpose(Purpose::Summarize).replies(["IgG binds FcRn and crosses the placenta.", "IgA is moved by pIgR."]))
    .rule(Rule::purpose(Purpose::DriftPrimer).reply("answer: probably IgG\nfollow_up: q1\nfollow_up: q2"))
    .playlist(
        Some(Purpose::DriftRefine),
        [
            "answer: IgG via FcRn\nfollow_up: q3\nfollow_up: q1",
            "answer: IgG\nfollow_up: q4\nfollow_up: q5",
            "answer: IgG\nfollow_up: q6",
            "answer: IgG\nfollow_up: q7",
        ],
    )
    .rule(Rule::purpose(Purpose::DriftReduce).reply("final_answer: IgG"))
}

#[test]
fn call_accounting_and_planted_answer() {
    let params = ChannelParams {
        branching_factor_b: 1,
        max_depth_D: 0,
        confidence_threshold_tau: 0.5,
        ..Default::default()
    };
    let cfg = RunConfig {
        loop_cfg: LoopConfig {
            params: params.clone(),
            max_parallel_channels: 3,
            ..Default::default()
        },
        more_thinking: MoreThinkingConfig {
            chains: 3,
            folds: 2,
            follow_ups: 2,
            ..Default::default()
        },
        ..Default::default()
    };
    let model = Arc::new(scripted());
    let ctx = RunContext::builder("run-mt", Arc::new(Gateway::scripted(model.clone())))
        .config(cfg.clone())
        .wall_clock(false)
        .start(Q, RunMode::MoreThinking)
        .unwrap();
    let started = Instant::now();
    let engine = Engine::new(ctx.clone()).unwrap();
    let out = more_thinking(&engine, Q, params, &cfg.more_thinking).unwrap();
    assert!(started.elapsed() < Duration::from_secs(5));

    assert_eq!(out.answer, "IgG");
    assert_eq!(out.chains_ok, 3);
    assert_eq!(ctx.status(), Some(RunStatus::Completed));

    let mut by_purpose: BTreeMap<String, usize> = BTreeMap::new();
    for e in ctx.events() {
        if let EventBody::ModelCall { purpose, .. } = &e.body {
            *by_purpose.entry(purpose.clone()).or_default() += 1;
        }
    }
    let communities = out.graph.communities.len();
    assert_eq!(communities, 2);
    let (f, u) = (2, 2);
    assert_eq!(by_purpose["drift_primer"], 1);
    assert_eq!(by_purpose["drift_refine"], f * u);
    assert_eq!(by_purpose["drift_reduce"], 1);
    assert_eq!(by_purpose["summarize"], communities);
    assert_eq!(by_purpose["extraction"], 3);
    assert_eq!(ctx.calls_in_scope("g"), 1 + f * u + 1 + communities + 3);
    assert_eq!(out.drift.calls, 1 + f * u + 1);
    assert_eq!(out.drift.follow_ups_asked, ["q1", "q2", "q3", "q4"]);

    let names: Vec<&str> = out.graph.nodes.iter().map(|n| n.name.as_str()).collect();
    assert_eq!(names, ["fcrn", "iga", "igg", "pigr", "placenta"]);
    assert_eq!(out.graph.node("igg").unwrap().occurrence_count, 2);
    let top = out.graph.top_level().unwrap();
    let members = out.graph.members(top);
    let groups: Vec<Vec<String>> = members.into_values().collect();
    assert_eq!(groups, vec![vec!["fcrn".to_string(), "igg".into(), "placenta".into()], vec!["iga".into(), "pigr".into()]]);

    let stages: Vec<String> = ctx
        .events()
        .into_iter()
        .filter_map(|e| match e.body {
            EventBody::Graph { stage, .. } => Some(stage),
            _ => None,
        })
        .collect();
    assert_eq!(stages, ["built", "clustered", "summarized", "export", "drift"]);
    clio_core::event::check_log(&ctx.events(), 0).unwrap();
}

#[test]
fn a_failed_chain_is_skipped() {
    let params = ChannelParams {
        branching_factor_b: 1,
        max_depth_D: 0,
        confidence_threshold_tau: 0.5,
        ..Default::default()
    };
    let cfg = RunConfig {
        loop_cfg: LoopConfig {
            params: params.clone(),
            max_parallel_channels: 1,
            ..Default::default()
        },
        more_thinking: MoreThinkingConfig {
            chains: 3,
            folds: 1,
            follow_ups: 1,
            ..Default::default()
        },
        ..Default::default()
    };
    // No coverage reply for chain m1: its first call fails permanently.
    let model = scripted();
    let model = ScriptedModel::new()
        .rule(Rule::purpose(Purpose::Coverage).subtree("m1").replies(Vec::<String>::new()))
        .fallback(move |r| clio_core::gateway::ChatModel::complete(&model, r).ok().filter(|_| !r.tag.channel_id.starts_with("m1")));
    let ctx = RunContext::builder("run-mt-fail", Arc::new(Gateway::scripted(Arc::new(model))))
        .config(cfg.clone())
        .wall_clock(false)
        .start(Q, RunMode::MoreThinking)
        .unwrap();
    let engine = Engine::new(ctx.clone()).unwrap();
    let out = more_thinking(&engine, Q, params, &cfg.more_thinking).unwrap();
    assert_eq!(out.chains_ok, 2);
    assert_eq!(out.chains_failed, 1);
    assert!(ctx
        .events()
        .iter()
        .any(|e| e.channel_id.as_deref() == Some("m1") && matches!(e.body, EventBody::Failure { .. })));
    assert_eq!(ctx.status(), Some(RunStatus::Completed));
}
