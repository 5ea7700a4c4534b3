//! Community summaries and the multi-chain "more thinking" driver.

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::cognitive::Engine;
use crate::config::MoreThinkingConfig;
use crate::event::{in_scope, ChannelRole, EventBody, RunEvent};
use crate::gateway::{structured_call, Gateway, Message, ModelRequest, Purpose};
use crate::prompts;
use crate::run::{attempt_prefix, RunError};
use crate::state::ChannelParams;

use super::{
    build_graph, cluster_graph, drift_search, extract_graph_fragments, CallFn, CommunitySummary, DriftOptions,
    DriftOutcome, GraphError, GraphFragment, ThoughtGraph,
};

/// One summarize call and one embedding per top-level community. The
/// summary is written back onto every member node.
pub fn summarize_communities(
    graph: &mut ThoughtGraph,
    question: &str,
    channel: &str,
    call: &CallFn<'_>,
    gateway: &Gateway,
) -> Result<Vec<CommunitySummary>, GraphError> {
    let Some(level) = graph.top_level() else {
        return if graph.nodes.is_empty() {
            Ok(Vec::new())
        } else {
            Err(GraphError::NotClustered)
        };
    };
    let mut out = Vec::new();
    for (community_id, members) in graph.members(level) {
        let entities: Vec<String> = members
            .iter()
            .filter_map(|m| graph.node(m))
            .map(|n| {
                let mut line = n.label.clone();
                if !n.type_label.is_empty() {
                    line.push_str(&format!(" ({})", n.type_label));
                }
                if !n.descriptions.is_empty() {
                    line.push_str(": ");
                    line.push_str(&n.descriptions.join("; "));
                }
                line
            })
            .collect();
        let relations: Vec<String> = graph
            .edges
            .iter()
            .filter(|e| members.contains(&e.source) && members.contains(&e.target))
            .map(|e| format!("{} -- {}: {} (weight {})", e.source, e.target, e.descriptions.join("; "), e.weight))
            .collect();
        let req = ModelRequest::new(
            vec![
                Message::system(prompts::SUMMARIZE_SYSTEM),
                Message::user(prompts::summarize(question, &entities, &relations)),
            ],
            0.0,
        )
        .tagged(Purpose::Summarize, channel);
        let summary_text = structured_call(&req, call, |r| {
            let t = r.text.trim();
            if t.is_empty() {
                Err("summary is empty".to_string())
            } else {
                Ok(t.to_string())
            }
        })?;
        let embedding = gateway.embed_one(&summary_text)?;
        for node in graph.nodes.iter_mut().filter(|n| members.contains(&n.name)) {
            node.summary = Some(summary_text.clone());
        }
        out.push(CommunitySummary {
            community_id,
            level,
            member_nodes: members,
            summary_text,
            embedding: Some(embedding),
        });
    }
    graph.communities = out.clone();
    Ok(out)
}

/// Embeds every node's retrieval text in one batch.
pub fn embed_nodes(graph: &mut ThoughtGraph, gateway: &Gateway) -> Result<(), GraphError> {
    if graph.nodes.is_empty() {
        return Ok(());
    }
    let texts: Vec<String> = graph.nodes.iter().map(|n| n.text()).collect();
    for (node, e) in graph.nodes.iter_mut().zip(gateway.embed(&texts)?) {
        node.embedding = Some(e);
    }
    Ok(())
}

/// The reasoning a chain produced: sampled and synthesized thoughts under
/// `root`, in log order, falling back to the chain's answer text.
pub fn chain_thoughts(events: &[RunEvent], root: &str, answer: &str) -> Vec<String> {
    let mut out: Vec<String> = events
        .iter()
        .filter(|e| e.channel_id.as_deref().is_some_and(|c| in_scope(c, root)))
        .filter_map(|e| match &e.body {
            EventBody::Sample { thought, .. } => Some(thought.clone()),
            EventBody::Synthesis {
                thought, fallback: false, ..
            } => Some(thought.clone()),
            _ => None,
        })
        .collect();
    if out.is_empty() && !answer.trim().is_empty() {
        out.push(answer.to_string());
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoreThinkingOutcome {
    pub answer: String,
    pub graph: ThoughtGraph,
    pub drift: DriftOutcome,
    pub chains_ok: usize,
    pub chains_failed: usize,
}

/// Samples `M` chains, merges them into one graph, clusters and summarizes
/// it, answers with DRIFT search and logs the answer on the run.
///
/// A failed chain is logged and skipped as long as one chain succeeds.
pub fn more_thinking(
    engine: &Engine,
    question: &str,
    params: ChannelParams,
    cfg: &MoreThinkingConfig,
) -> Result<MoreThinkingOutcome, RunError> {
    cfg.validate()?;
    let ctx = engine.ctx();
    let prefix = attempt_prefix(ctx.attempt());
    let temperatures = cfg.chain_temperatures();
    let jobs: Vec<(usize, f64)> = temperatures.into_iter().enumerate().collect();
    let results = engine.for_each_par(jobs, |(i, t)| {
        let root = format!("{prefix}m{i}");
        let outcome = engine.explore(question, params.clone().with_temperature(t), &root, ChannelRole::Chain);
        (root, outcome)
    });

    let mut chains: Vec<Vec<String>> = Vec::new();
    let mut first_error = None;
    let mut failed = 0;
    for (root, outcome) in results {
        match outcome {
            Ok((answer, _)) => chains.push(chain_thoughts(&ctx.events(), &root, &answer.thought)),
            Err(e) => {
                if ctx.is_run_cancelled() {
                    return Err(RunError::Cancelled);
                }
                failed += 1;
                tracing::warn!(chain = %root, error = %e, "chain failed");
                if ctx.is_spawned(&root) {
                    ctx.emit(Some(&root), EventBody::Failure { error: e.to_string() });
                }
                first_error.get_or_insert(e);
            }
        }
    }
    if chains.is_empty() {
        return Err(first_error.unwrap_or_else(|| RunError::Other("no chains ran".into())));
    }

    let g = format!("{prefix}g");
    ctx.spawn(&g, None, 0, ChannelRole::Graph, None)?;
    let call = |r: &ModelRequest| ctx.call(&g, r);
    let mut fragments: Vec<GraphFragment> = Vec::new();
    for chain in &chains {
        if chain.is_empty() {
            continue;
        }
        fragments.push(extract_graph_fragments(chain, &g, &call)?);
    }
    let mut graph = build_graph(&fragments);
    ctx.emit(
        Some(&g),
        EventBody::Graph {
            stage: "built".into(),
            detail: json!({"nodes": graph.nodes.len(), "edges": graph.edges.len(), "fragments": fragments.len()}),
        },
    );
    let clustering = cluster_graph(&mut graph)?;
    ctx.emit(
        Some(&g),
        EventBody::Graph {
            stage: "clustered".into(),
            detail: json!({"levels": clustering.levels.len(), "communities": clustering.top().iter().max().map_or(0, |c| c + 1), "modularity": clustering.modularity}),
        },
    );
    let gateway = ctx.gateway().clone();
    let summaries = summarize_communities(&mut graph, question, &g, &call, &gateway)?;
    embed_nodes(&mut graph, &gateway)?;
    ctx.emit(
        Some(&g),
        EventBody::Graph {
            stage: "summarized".into(),
            detail: json!({"communities": summaries.len()}),
        },
    );
    let opts = DriftOptions {
        folds: cfg.folds,
        follow_ups: cfg.follow_ups,
        top_k_communities: cfg.top_k_communities,
        top_k_nodes: cfg.top_k_nodes,
    };
    let drift = drift_search(question, &graph, &opts, &g, &call, &gateway)?;
    ctx.emit(
        Some(&g),
        EventBody::Graph {
            stage: "export".into(),
            detail: serde_json::to_value(&graph).expect("graph serializes"),
        },
    );
    ctx.emit(
        Some(&g),
        EventBody::Graph {
            stage: "drift".into(),
            detail: json!({
                "primer_communities": drift.primer_communities,
                "follow_ups": drift.follow_ups_asked,
                "calls": drift.calls,
            }),
        },
    );
    ctx.complete(None, &drift.answer, None)?;
    Ok(MoreThinkingOutcome {
        answer: drift.answer.clone(),
        graph,
        drift,
        chains_ok: chains.len(),
        chains_failed: failed,
    })
}
