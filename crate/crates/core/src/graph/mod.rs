//! Knowledge graph built from sampled thought chains.
//!
//! Chains are mined for entities and relations, merged into one graph,
//! clustered into nested communities, summarized, and finally queried with
//! a DRIFT-style search (global primer over community summaries, then local
//! follow-up folds over nodes).

mod cluster;
mod drift;
mod ensemble;
mod extract;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::EmbeddingVector;
use crate::run::RunError;

pub use cluster::{cluster_graph, louvain, modularity, Clustering, WeightedGraph};
pub use drift::{drift_search, DriftOptions, DriftOutcome};
pub use ensemble::{chain_thoughts, embed_nodes, more_thinking, summarize_communities, MoreThinkingOutcome};
pub use extract::{extract_graph_fragments, parse_fragment};

/// A logged model call, usually [`crate::run::RunContext::call`] bound to a channel.
pub type CallFn<'a> = dyn Fn(&crate::gateway::ModelRequest) -> Result<crate::gateway::ModelResponse, RunError> + Sync + 'a;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("graph is empty")]
    EmptyGraph,
    #[error("graph is not clustered")]
    NotClustered,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Run(#[from] RunError),
}

impl From<GraphError> for RunError {
    fn from(e: GraphError) -> Self {
        match e {
            GraphError::Run(r) => r,
            other => RunError::Other(other.to_string()),
        }
    }
}

impl From<crate::gateway::GatewayError> for GraphError {
    fn from(e: crate::gateway::GatewayError) -> Self {
        GraphError::Run(e.into())
    }
}

/// Case-folds, trims and collapses internal whitespace.
pub fn normalize_name(name: &str) -> String {
    name.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    pub name: String,
    pub type_label: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Relation {
    pub source: String,
    pub target: String,
    pub description: String,
    pub strength: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GraphFragment {
    pub entities: Vec<Entity>,
    pub relations: Vec<Relation>,
}

impl GraphFragment {
    pub fn is_empty(&self) -> bool {
        self.entities.is_empty() && self.relations.is_empty()
    }

    /// Appends another fragment, creating entities for relation endpoints
    /// that were never listed.
    pub fn extend(&mut self, other: GraphFragment) {
        self.entities.extend(other.entities);
        self.relations.extend(other.relations);
        self.close_over_relations();
    }

    pub(crate) fn close_over_relations(&mut self) {
        let mut known: BTreeSet<String> = self.entities.iter().map(|e| normalize_name(&e.name)).collect();
        let mut missing = Vec::new();
        for r in &self.relations {
            for end in [&r.source, &r.target] {
                if known.insert(normalize_name(end)) {
                    missing.push(Entity {
                        name: end.trim().to_string(),
                        type_label: String::new(),
                        description: String::new(),
                    });
                }
            }
        }
        self.entities.extend(missing);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphNode {
    /// Normalized name, unique in the graph.
    pub name: String,
    /// Lexicographically smallest surface form seen.
    pub label: String,
    pub type_label: String,
    pub descriptions: Vec<String>,
    pub occurrence_count: usize,
    /// Community per hierarchy level, finest first.
    #[serde(default)]
    pub communities: Vec<usize>,
    #[serde(default)]
    pub summary: Option<String>,
    #[serde(default)]
    pub embedding: Option<EmbeddingVector>,
}

impl GraphNode {
    /// Retrieval text: entity, merged descriptions and community summary.
    pub fn text(&self) -> String {
        let mut out = self.label.clone();
        if !self.type_label.is_empty() {
            out.push_str(&format!(" ({})", self.type_label));
        }
        for d in &self.descriptions {
            out.push_str(": ");
            out.push_str(d);
        }
        if let Some(s) = &self.summary {
            out.push_str(" | community: ");
            out.push_str(s);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphEdge {
    /// Endpoints ordered so that `source < target`.
    pub source: String,
    pub target: String,
    pub descriptions: Vec<String>,
    /// Number of fragments that contributed the relation.
    pub weight: f64,
    pub occurrence_count: usize,
    pub strength: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommunitySummary {
    pub community_id: usize,
    pub level: usize,
    pub member_nodes: Vec<String>,
    pub summary_text: String,
    pub embedding: Option<EmbeddingVector>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThoughtGraph {
    pub schema_version: u32,
    /// Sorted by name.
    pub nodes: Vec<GraphNode>,
    /// Sorted by (source, target).
    pub edges: Vec<GraphEdge>,
    pub levels: usize,
    #[serde(default)]
    pub modularity: Option<f64>,
    #[serde(default)]
    pub communities: Vec<CommunitySummary>,
}

impl Default for ThoughtGraph {
    fn default() -> Self {
        Self {
            schema_version: crate::SCHEMA_VERSION,
            nodes: Vec::new(),
            edges: Vec::new(),
            levels: 0,
            modularity: None,
            communities: Vec::new(),
        }
    }
}

impl ThoughtGraph {
    pub fn node(&self, name: &str) -> Option<&GraphNode> {
        self.nodes
            .binary_search_by(|n| n.name.as_str().cmp(name))
            .ok()
            .map(|i| &self.nodes[i])
    }

    pub fn edge(&self, a: &str, b: &str) -> Option<&GraphEdge> {
        let (s, t) = if a <= b { (a, b) } else { (b, a) };
        self.edges.iter().find(|e| e.source == s && e.target == t)
    }

    /// Index of the coarsest level, if clustered.
    pub fn top_level(&self) -> Option<usize> {
        self.levels.checked_sub(1)
    }

    /// Members of each community at `level`, keyed by community id.
    pub fn members(&self, level: usize) -> BTreeMap<usize, Vec<String>> {
        let mut out: BTreeMap<usize, Vec<String>> = BTreeMap::new();
        for n in &self.nodes {
            if let Some(&c) = n.communities.get(level) {
                out.entry(c).or_default().push(n.name.clone());
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph serializes")
    }

    pub fn from_json(raw: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(raw)
    }
}

fn push_unique(list: &mut Vec<String>, item: &str) {
    let item = item.trim();
    if !item.is_empty() && !list.iter().any(|d| d == item) {
        list.push(item.to_string());
    }
}

/// Merges fragments into one graph. Nodes are keyed by normalized name and
/// counted once per contributing fragment; relations are undirected, keyed
/// by endpoint pair, and weighted by the number of fragments stating them.
/// Descriptions are kept sorted so the result does not depend on fragment order.
pub fn build_graph(fragments: &[GraphFragment]) -> ThoughtGraph {
    struct NodeAcc {
        labels: BTreeSet<String>,
        types: HashMap<String, usize>,
        descriptions: Vec<String>,
        count: usize,
    }
    struct EdgeAcc {
        descriptions: Vec<String>,
        count: usize,
        strength: f64,
    }
    let mut nodes: BTreeMap<String, NodeAcc> = BTreeMap::new();
    let mut edges: BTreeMap<(String, String), EdgeAcc> = BTreeMap::new();

    for fragment in fragments {
        let mut closed = fragment.clone();
        closed.close_over_relations();
        let mut seen_nodes = BTreeSet::new();
        for e in &closed.entities {
            let key = normalize_name(&e.name);
            if key.is_empty() {
                continue;
            }
            let acc = nodes.entry(key.clone()).or_insert_with(|| NodeAcc {
                labels: BTreeSet::new(),
                types: HashMap::new(),
                descriptions: Vec::new(),
                count: 0,
            });
            acc.labels.insert(e.name.split_whitespace().collect::<Vec<_>>().join(" "));
            if !e.type_label.trim().is_empty() {
                *acc.types.entry(e.type_label.trim().to_string()).or_default() += 1;
            }
            push_unique(&mut acc.descriptions, &e.description);
            if seen_nodes.insert(key) {
                acc.count += 1;
            }
        }
        let mut seen_edges = BTreeSet::new();
        for r in &closed.relations {
            let (a, b) = (normalize_name(&r.source), normalize_name(&r.target));
            if a == b || a.is_empty() || b.is_empty() {
                continue;
            }
            let key = if a < b { (a, b) } else { (b, a) };
            let acc = edges.entry(key.clone()).or_insert_with(|| EdgeAcc {
                descriptions: Vec::new(),
                count: 0,
                strength: 0.0,
            });
            push_unique(&mut acc.descriptions, &r.description);
            acc.strength = acc.strength.max(r.strength);
            if seen_edges.insert(key) {
                acc.count += 1;
            }
        }
    }

    let nodes = nodes
        .into_iter()
        .map(|(name, acc)| {
            let type_label = acc
                .types
                .iter()
                .max_by(|(ta, ca), (tb, cb)| ca.cmp(cb).then_with(|| tb.cmp(ta)))
                .map(|(t, _)| t.clone())
                .unwrap_or_default();
            let mut descriptions = acc.descriptions;
            descriptions.sort();
            GraphNode {
                label: acc.labels.iter().next().cloned().unwrap_or_else(|| name.clone()),
                name,
                type_label,
                descriptions,
                occurrence_count: acc.count,
                communities: Vec::new(),
                summary: None,
                embedding: None,
            }
        })
        .collect();
    let edges = edges
        .into_iter()
        .map(|((source, target), mut acc)| {
            acc.descriptions.sort();
            GraphEdge {
                source,
                target,
                descriptions: acc.descriptions,
                weight: acc.count as f64,
                occurrence_count: acc.count,
                strength: acc.strength,
            }
        })
        .collect();
    ThoughtGraph {
        nodes,
        edges,
        ..ThoughtGraph::default()
    }
}
