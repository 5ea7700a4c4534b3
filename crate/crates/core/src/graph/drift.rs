//! DRIFT-style search over a summarized graph.
//!
//! One primer call over the top community summaries yields a first answer
//! and `u` follow-up queries. Each of `f` folds answers its follow-ups
//! against the nearest nodes (one refine call each) and hands the first `u`
//! new follow-ups to the next fold. A final reduce call merges everything.
//! With full follow-up lists that is exactly `1 + f·u + 1` calls.

use serde::{Deserialize, Serialize};

use crate::gateway::cosine;
use crate::gateway::{structured_call, EmbeddingVector, Gateway, Message, ModelRequest, Purpose};
use crate::prompts;
use crate::reply;

use super::{CallFn, GraphError, ThoughtGraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DriftOptions {
    pub folds: usize,
    pub follow_ups: usize,
    pub top_k_communities: usize,
    pub top_k_nodes: usize,
}

impl Default for DriftOptions {
    fn default() -> Self {
        Self {
            folds: 2,
            follow_ups: 3,
            top_k_communities: 5,
            top_k_nodes: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftOutcome {
    pub answer: String,
    pub primer_answer: String,
    /// Community ids in primer order.
    pub primer_communities: Vec<usize>,
    pub follow_ups_asked: Vec<String>,
    pub findings: Vec<String>,
    pub calls: usize,
}

/// Indices of `candidates` by descending similarity to `query`; ties keep index order.
fn rank(query: &EmbeddingVector, candidates: &[&EmbeddingVector], k: usize) -> Vec<usize> {
    let mut scored: Vec<(usize, f64)> = candidates.iter().enumerate().map(|(i, e)| (i, cosine(query, e))).collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.into_iter().take(k).map(|(i, _)| i).collect()
}

fn drift_request(purpose: Purpose, system: &str, user: String, channel: &str) -> ModelRequest {
    ModelRequest::new(vec![Message::system(system), Message::user(user)], 0.0)
        .structured()
        .tagged(purpose, channel)
}

pub fn drift_search(
    question: &str,
    graph: &ThoughtGraph,
    opts: &DriftOptions,
    channel: &str,
    call: &CallFn<'_>,
    gateway: &Gateway,
) -> Result<DriftOutcome, GraphError> {
    if opts.folds == 0 || opts.follow_ups == 0 {
        return Err(GraphError::InvalidArgument("folds and follow-ups must be at least 1".into()));
    }
    if opts.top_k_communities == 0 || opts.top_k_nodes == 0 {
        return Err(GraphError::InvalidArgument("retrieval sizes must be at least 1".into()));
    }
    if graph.nodes.is_empty() {
        return Err(GraphError::EmptyGraph);
    }
    if graph.communities.is_empty() {
        return Err(GraphError::NotClustered);
    }
    let u = opts.follow_ups;
    let mut calls = 0;

    let community_embeddings: Vec<EmbeddingVector> = match graph.communities.iter().map(|c| c.embedding.clone()).collect::<Option<Vec<_>>>() {
        Some(v) => v,
        None => gateway.embed(&graph.communities.iter().map(|c| c.summary_text.clone()).collect::<Vec<_>>())?,
    };
    let node_embeddings: Vec<EmbeddingVector> = match graph.nodes.iter().map(|n| n.embedding.clone()).collect::<Option<Vec<_>>>() {
        Some(v) => v,
        None => gateway.embed(&graph.nodes.iter().map(|n| n.text()).collect::<Vec<_>>())?,
    };

    let q = gateway.embed_one(question)?;
    let top = rank(&q, &community_embeddings.iter().collect::<Vec<_>>(), opts.top_k_communities);
    let summaries: Vec<String> = top.iter().map(|&i| graph.communities[i].summary_text.clone()).collect();
    let primer_req = drift_request(
        Purpose::DriftPrimer,
        prompts::DRIFT_SYSTEM,
        prompts::drift_primer(question, &summaries, u),
        channel,
    );
    let primer = structured_call(&primer_req, call, |r| reply::parse_drift(&r.text))?;
    calls += 1;

    let mut current_answer = primer.answer.clone();
    let mut queue: Vec<String> = primer.follow_ups.into_iter().take(u).collect();
    let mut asked = Vec::new();
    let mut findings = Vec::new();
    for _fold in 0..opts.folds {
        if queue.is_empty() {
            break;
        }
        let query_embeddings = gateway.embed(&queue)?;
        let mut next: Vec<String> = Vec::new();
        for (follow_up, qe) in queue.iter().zip(&query_embeddings) {
            let nodes: Vec<String> = rank(qe, &node_embeddings.iter().collect::<Vec<_>>(), opts.top_k_nodes)
                .into_iter()
                .map(|i| graph.nodes[i].text())
                .collect();
            let req = drift_request(
                Purpose::DriftRefine,
                prompts::DRIFT_SYSTEM,
                prompts::drift_refine(question, &current_answer, follow_up, &nodes, u),
                channel,
            );
            let refined = structured_call(&req, call, |r| reply::parse_drift(&r.text))?;
            calls += 1;
            asked.push(follow_up.clone());
            current_answer = refined.answer.clone();
            findings.push(refined.answer);
            for f in refined.follow_ups {
                if next.len() < u && !asked.contains(&f) && !next.contains(&f) {
                    next.push(f);
                }
            }
        }
        queue = next;
    }

    let reduce_req = drift_request(
        Purpose::DriftReduce,
        prompts::DRIFT_REDUCE_SYSTEM,
        prompts::drift_reduce(question, &primer.answer, &findings),
        channel,
    );
    let reduced = call(&reduce_req)?;
    calls += 1;
    Ok(DriftOutcome {
        answer: reply::extract_answer(&reduced.text),
        primer_answer: primer.answer,
        primer_communities: top.iter().map(|&i| graph.communities[i].community_id).collect(),
        follow_ups_asked: asked,
        findings,
        calls,
    })
}
