//! Greedy modularity clustering (Louvain levels plus a final refinement).
//!
//! Nodes are visited in index order, which for a [`ThoughtGraph`] is sorted
//! name order; ties between candidate communities go to the community whose
//! lowest-index member comes first. No randomness is involved.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{GraphError, ThoughtGraph};

const MOVE_EPS: f64 = 1e-12;
const LEVEL_GAIN: f64 = 1e-6;
/// Largest graph the dense spectral start is tried on.
const SPECTRAL_MAX_NODES: usize = 300;

/// Undirected weighted graph with self-loop weights kept separately.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedGraph {
    adj: Vec<BTreeMap<usize, f64>>,
    self_loops: Vec<f64>,
}

impl WeightedGraph {
    pub fn new(n: usize) -> Self {
        Self {
            adj: vec![BTreeMap::new(); n],
            self_loops: vec![0.0; n],
        }
    }

    /// Builds from `(a, b, weight)` triples; parallel edges add up.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Self {
        let mut g = Self::new(n);
        for &(a, b, w) in edges {
            g.add_edge(a, b, w);
        }
        g
    }

    pub fn add_edge(&mut self, a: usize, b: usize, w: f64) {
        if a == b {
            self.self_loops[a] += w;
        } else {
            *self.adj[a].entry(b).or_default() += w;
            *self.adj[b].entry(a).or_default() += w;
        }
    }

    pub fn len(&self) -> usize {
        self.adj.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adj.is_empty()
    }

    fn degree(&self, i: usize) -> f64 {
        self.adj[i].values().sum::<f64>() + 2.0 * self.self_loops[i]
    }

    /// Total edge weight `m`.
    pub fn total_weight(&self) -> f64 {
        let pairs: f64 = self.adj.iter().map(|a| a.values().sum::<f64>()).sum();
        pairs / 2.0 + self.self_loops.iter().sum::<f64>()
    }
}

/// Newman modularity of `membership`; zero for a graph without edges.
pub fn modularity(g: &WeightedGraph, membership: &[usize]) -> f64 {
    let m = g.total_weight();
    if m == 0.0 {
        return 0.0;
    }
    let mut internal: BTreeMap<usize, f64> = BTreeMap::new();
    let mut total: BTreeMap<usize, f64> = BTreeMap::new();
    for i in 0..g.len() {
        let c = membership[i];
        *total.entry(c).or_default() += g.degree(i);
        *internal.entry(c).or_default() += g.self_loops[i];
        for (&j, &w) in &g.adj[i] {
            if j > i && membership[j] == c {
                *internal.entry(c).or_default() += w;
            }
        }
    }
    total
        .iter()
        .map(|(c, tot)| internal.get(c).copied().unwrap_or(0.0) / m - (tot / (2.0 * m)).powi(2))
        .sum()
}

/// Renumbers communities by their lowest member index.
fn canonical(membership: &[usize]) -> Vec<usize> {
    let mut ids: BTreeMap<usize, usize> = BTreeMap::new();
    membership
        .iter()
        .map(|&c| {
            let next = ids.len();
            *ids.entry(c).or_insert(next)
        })
        .collect()
}

/// Repeated single-node moves from `start` until no move improves modularity.
fn local_moves(g: &WeightedGraph, start: &[usize]) -> Vec<usize> {
    let n = g.len();
    let m = g.total_weight();
    let mut comm = canonical(start);
    if m == 0.0 {
        return comm;
    }
    let two_m2 = 2.0 * m * m;
    let degree: Vec<f64> = (0..n).map(|i| g.degree(i)).collect();
    let mut tot = vec![0.0; n];
    let mut members: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for i in 0..n {
        tot[comm[i]] += degree[i];
        members[comm[i]].insert(i);
    }
    loop {
        let mut moved = false;
        for i in 0..n {
            let ci = comm[i];
            let ki = degree[i];
            let mut links: BTreeMap<usize, f64> = BTreeMap::new();
            for (&j, &w) in &g.adj[i] {
                *links.entry(comm[j]).or_default() += w;
            }
            tot[ci] -= ki;
            members[ci].remove(&i);
            let gain = |c: usize, tot: &[f64]| links.get(&c).copied().unwrap_or(0.0) / m - tot[c] * ki / two_m2;
            let stay = gain(ci, &tot);
            let rep = |c: usize, members: &[BTreeSet<usize>]| members[c].first().copied().unwrap_or(i);
            let mut best = ci;
            let mut best_gain = stay;
            let mut candidates: Vec<usize> = links.keys().copied().filter(|&c| c != ci).collect();
            if !members[ci].is_empty() {
                if let Some(empty) = (0..n).find(|&c| members[c].is_empty()) {
                    candidates.push(empty);
                }
            }
            for c in candidates {
                let gc = gain(c, &tot);
                if gc <= stay + MOVE_EPS {
                    continue;
                }
                let tie = (gc - best_gain).abs() <= MOVE_EPS && best != ci && rep(c, &members) < rep(best, &members);
                if gc > best_gain + MOVE_EPS || tie {
                    best = c;
                    best_gain = gc;
                }
            }
            tot[best] += ki;
            members[best].insert(i);
            if best != ci {
                comm[i] = best;
                moved = true;
            }
        }
        if !moved {
            break;
        }
    }
    canonical(&comm)
}

/// Merges the pair of communities with the largest positive gain, if any.
fn best_merge(g: &WeightedGraph, membership: &[usize]) -> Option<Vec<usize>> {
    let m = g.total_weight();
    if m == 0.0 {
        return None;
    }
    let k = membership.iter().max().map_or(0, |c| c + 1);
    let mut tot = vec![0.0; k];
    let mut between: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for i in 0..g.len() {
        tot[membership[i]] += g.degree(i);
        for (&j, &w) in &g.adj[i] {
            let (a, b) = (membership[i], membership[j]);
            if a < b {
                *between.entry((a, b)).or_default() += w;
            }
        }
    }
    let mut best: Option<((usize, usize), f64)> = None;
    for (&(a, b), &w) in &between {
        let gain = w / m - tot[a] * tot[b] / (2.0 * m * m);
        if gain > MOVE_EPS && best.is_none_or(|(_, g)| gain > g + MOVE_EPS) {
            best = Some(((a, b), gain));
        }
    }
    best.map(|((a, b), _)| canonical(&membership.iter().map(|&c| if c == b { a } else { c }).collect::<Vec<_>>()))
}

/// One Kernighan-Lin style pass: every node moves exactly once, each time
/// taking the best available move even when it lowers modularity, and the
/// best partition seen along the way is kept. Returns `None` when no
/// intermediate partition beats the start.
fn vertex_mover_pass(g: &WeightedGraph, start: &[usize]) -> Option<Vec<usize>> {
    let n = g.len();
    let m = g.total_weight();
    if m == 0.0 || n < 2 {
        return None;
    }
    let two_m2 = 2.0 * m * m;
    let degree: Vec<f64> = (0..n).map(|i| g.degree(i)).collect();
    let mut comm = canonical(start);
    let mut tot = vec![0.0; n];
    let mut size = vec![0usize; n];
    for i in 0..n {
        tot[comm[i]] += degree[i];
        size[comm[i]] += 1;
    }
    let mut moved = vec![false; n];
    let mut q = modularity(g, &comm);
    let mut best_q = q;
    let mut best: Option<Vec<usize>> = None;
    for _ in 0..n {
        let mut step: Option<(usize, usize, f64)> = None;
        for i in (0..n).filter(|&i| !moved[i]) {
            let a = comm[i];
            let ki = degree[i];
            let mut links: BTreeMap<usize, f64> = BTreeMap::new();
            for (&j, &w) in &g.adj[i] {
                *links.entry(comm[j]).or_default() += w;
            }
            let own = links.get(&a).copied().unwrap_or(0.0);
            let mut candidates: Vec<usize> = links.keys().copied().filter(|&c| c != a).collect();
            if size[a] > 1 {
                if let Some(empty) = (0..n).find(|&c| size[c] == 0) {
                    candidates.push(empty);
                }
            }
            for c in candidates {
                let delta = (links.get(&c).copied().unwrap_or(0.0) - own) / m - ki * (tot[c] - (tot[a] - ki)) / two_m2;
                if step.is_none_or(|(_, _, d)| delta > d + MOVE_EPS) {
                    step = Some((i, c, delta));
                }
            }
        }
        let Some((i, c, delta)) = step else { break };
        let a = comm[i];
        tot[a] -= degree[i];
        size[a] -= 1;
        tot[c] += degree[i];
        size[c] += 1;
        comm[i] = c;
        moved[i] = true;
        q += delta;
        if q > best_q + MOVE_EPS {
            best_q = q;
            best = Some(canonical(&comm));
        }
    }
    best
}

fn aggregate(g: &WeightedGraph, membership: &[usize]) -> WeightedGraph {
    let k = membership.iter().max().map_or(0, |c| c + 1);
    let mut out = WeightedGraph::new(k);
    for i in 0..g.len() {
        out.self_loops[membership[i]] += g.self_loops[i];
        for (&j, &w) in &g.adj[i] {
            if j > i {
                out.add_edge(membership[i], membership[j], w);
            }
        }
    }
    out
}

/// Recursive leading-eigenvector bisection of the modularity matrix. A group
/// is split by the signs of the leading eigenvector of its generalized
/// modularity matrix while that raises modularity.
fn spectral_partition(g: &WeightedGraph) -> Vec<usize> {
    use nalgebra::DMatrix;

    let n = g.len();
    let two_m = 2.0 * g.total_weight();
    let degree: Vec<f64> = (0..n).map(|i| g.degree(i)).collect();
    let b = |i: usize, j: usize| {
        let a = if i == j {
            2.0 * g.self_loops[i]
        } else {
            g.adj[i].get(&j).copied().unwrap_or(0.0)
        };
        a - degree[i] * degree[j] / two_m
    };
    let mut membership = vec![0; n];
    let mut next_id = 1;
    let mut queue: Vec<Vec<usize>> = vec![(0..n).collect()];
    while let Some(group) = queue.pop() {
        let k = group.len();
        if k < 2 {
            continue;
        }
        let row_sums: Vec<f64> = group.iter().map(|&i| group.iter().map(|&l| b(i, l)).sum()).collect();
        let bg = DMatrix::from_fn(k, k, |x, y| {
            b(group[x], group[y]) - if x == y { row_sums[x] } else { 0.0 }
        });
        let eig = bg.clone().symmetric_eigen();
        let (lead, value) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 + MOVE_EPS { (i, v) } else { acc });
        if value <= MOVE_EPS {
            continue;
        }
        let v = eig.eigenvectors.column(lead);
        let s: Vec<f64> = (0..k).map(|x| if v[x] > 0.0 { 1.0 } else { -1.0 }).collect();
        let gain: f64 = (0..k).map(|x| (0..k).map(|y| s[x] * bg[(x, y)] * s[y]).sum::<f64>()).sum();
        if gain <= MOVE_EPS || s.iter().all(|&x| x == s[0]) {
            continue;
        }
        let (left, right): (Vec<usize>, Vec<usize>) = (0..k).partition(|&x| s[x] > 0.0);
        let right: Vec<usize> = right.into_iter().map(|x| group[x]).collect();
        for &i in &right {
            membership[i] = next_id;
        }
        next_id += 1;
        queue.push(left.into_iter().map(|x| group[x]).collect());
        queue.push(right);
    }
    canonical(&membership)
}

/// Node moves, community merges and vertex-mover passes until none helps.
fn refine(g: &WeightedGraph, start: Vec<usize>) -> Vec<usize> {
    let mut top = start;
    loop {
        let moved = local_moves(g, &top);
        let improved_by_moves = modularity(g, &moved) > modularity(g, &top) + MOVE_EPS;
        top = moved;
        if let Some(merged) = best_merge(g, &top) {
            top = merged;
            continue;
        }
        if let Some(shifted) = vertex_mover_pass(g, &top) {
            top = shifted;
            continue;
        }
        if !improved_by_moves {
            return top;
        }
    }
}

/// Nested partitions, finest first, and the modularity of the coarsest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    pub levels: Vec<Vec<usize>>,
    pub modularity: f64,
}

impl Clustering {
    pub fn top(&self) -> &[usize] {
        self.levels.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Louvain levels until the gain drops below 1e-6, then [`refine`] on the
/// original graph from several starts (the Louvain result, all singletons,
/// one community and, for small graphs, a spectral bisection), keeping the
/// best; ties go to the earlier start. Lower levels
/// are intersected with the final partition so the hierarchy stays nested.
pub fn louvain(g: &WeightedGraph) -> Clustering {
    let n = g.len();
    let base = g;
    let mut levels: Vec<Vec<usize>> = Vec::new();
    let mut mapping: Vec<usize> = (0..n).collect();
    let mut current = g.clone();
    loop {
        let singletons: Vec<usize> = (0..current.len()).collect();
        let moved = local_moves(&current, &singletons);
        let next = canonical(&mapping.iter().map(|&c| moved[c]).collect::<Vec<_>>());
        let gain = modularity(base, &next) - modularity(base, &mapping);
        if levels.is_empty() || gain >= LEVEL_GAIN {
            levels.push(next.clone());
        }
        if gain < LEVEL_GAIN {
            break;
        }
        current = aggregate(&current, &moved);
        mapping = next;
    }

    let mut starts = vec![levels.last().cloned().unwrap_or_default(), (0..n).collect(), vec![0; n]];
    if n <= SPECTRAL_MAX_NODES && base.total_weight() > 0.0 {
        starts.push(spectral_partition(base));
    }
    let mut top: Vec<usize> = Vec::new();
    let mut top_q = f64::NEG_INFINITY;
    for start in starts {
        let refined = refine(base, start);
        let q = modularity(base, &refined);
        if q > top_q + MOVE_EPS {
            top = refined;
            top_q = q;
        }
    }

    let mut nested: Vec<Vec<usize>> = Vec::new();
    let count = levels.len();
    for level in levels.into_iter().take(count.saturating_sub(1)) {
        let pairs: Vec<(usize, usize)> = level.iter().zip(&top).map(|(&a, &b)| (a, b)).collect();
        let mut ids: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        let refined: Vec<usize> = pairs
            .iter()
            .map(|p| {
                let next = ids.len();
                *ids.entry(*p).or_insert(next)
            })
            .collect();
        let refined = canonical(&refined);
        if nested.last() != Some(&refined) && refined != top {
            nested.push(refined);
        }
    }
    nested.push(top);
    let q = modularity(base, nested.last().expect("at least one level"));
    Clustering {
        levels: nested,
        modularity: q,
    }
}

/// Clusters the graph in place: every node gets one community per level.
pub fn cluster_graph(graph: &mut ThoughtGraph) -> Result<Clustering, GraphError> {
    if graph.nodes.is_empty() {
        return Err(GraphError::EmptyGraph);
    }
    let index: BTreeMap<&str, usize> = graph.nodes.iter().enumerate().map(|(i, n)| (n.name.as_str(), i)).collect();
    let edges: Vec<(usize, usize, f64)> = graph
        .edges
        .iter()
        .filter_map(|e| Some((*index.get(e.source.as_str())?, *index.get(e.target.as_str())?, e.weight)))
        .collect();
    let wg = WeightedGraph::from_edges(graph.nodes.len(), &edges);
    let clustering = louvain(&wg);
    for (i, node) in graph.nodes.iter_mut().enumerate() {
        node.communities = clustering.levels.iter().map(|l| l[i]).collect();
    }
    graph.levels = clustering.levels.len();
    graph.modularity = Some(clustering.modularity);
    graph.communities.clear();
    Ok(clustering)
}
