//! Bipartite domain / slot-value graph, edge splits and negative sampling.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dialogue_model::{DialogueState, NONE_VALUE};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("graph has {have} edges, need at least {need}")]
    TooFewEdges { have: usize, need: usize },
    #[error("split fractions must be positive and sum to 1 (got {0}, {1}, {2})")]
    BadFractions(f64, f64, f64),
    #[error("only {available} non-edges available, {needed} negatives requested")]
    InsufficientNegatives { available: usize, needed: usize },
    #[error("line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Domain,
    SlotValue,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub index: usize,
    pub kind: NodeKind,
    /// Domain name, or `slot-value` for slot-value nodes.
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slot: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<String>,
}

/// Undirected edge, stored with the smaller index first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge(pub usize, pub usize);

impl Edge {
    pub fn new(a: usize, b: usize) -> Self {
        if a <= b {
            Edge(a, b)
        } else {
            Edge(b, a)
        }
    }
}

impl fmt::Display for Edge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.0, self.1)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StateGraph {
    nodes: Vec<Node>,
    edges: BTreeSet<Edge>,
    domains: HashMap<String, usize>,
    slot_values: HashMap<(String, String), usize>,
}

impl StateGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// One domain node per domain, one slot-value node per `(slot, value)`,
    /// one edge per observed triple. `NONE` values are skipped. Indices follow
    /// first appearance.
    pub fn build<'a, I>(states: I) -> Self
    where
        I: IntoIterator<Item = &'a DialogueState>,
    {
        let mut g = Self::new();
        for state in states {
            for t in state.triples() {
                if t.value == NONE_VALUE {
                    continue;
                }
                let d = g.add_domain(&t.domain);
                let sv = g.add_slot_value(&t.slot, &t.value);
                g.add_edge(d, sv);
            }
        }
        g
    }

    pub fn add_domain(&mut self, name: &str) -> usize {
        if let Some(&i) = self.domains.get(name) {
            return i;
        }
        let index = self.nodes.len();
        self.nodes.push(Node {
            index,
            kind: NodeKind::Domain,
            label: name.to_owned(),
            slot: None,
            value: None,
        });
        self.domains.insert(name.to_owned(), index);
        index
    }

    pub fn add_slot_value(&mut self, slot: &str, value: &str) -> usize {
        let key = (slot.to_owned(), value.to_owned());
        if let Some(&i) = self.slot_values.get(&key) {
            return i;
        }
        let index = self.nodes.len();
        self.nodes.push(Node {
            index,
            kind: NodeKind::SlotValue,
            label: format!("{slot}-{value}"),
            slot: Some(slot.to_owned()),
            value: Some(value.to_owned()),
        });
        self.slot_values.insert(key, index);
        index
    }

    /// Adds a domain / slot-value edge. Returns false for a duplicate.
    ///
    /// # Panics
    /// If both endpoints have the same kind or an index is out of range.
    pub fn add_edge(&mut self, a: usize, b: usize) -> bool {
        assert!(
            self.nodes[a].kind != self.nodes[b].kind,
            "edges must join a domain node to a slot-value node"
        );
        self.edges.insert(Edge::new(a, b))
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> &Node {
        &self.nodes[i]
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edges(&self) -> &BTreeSet<Edge> {
        &self.edges
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.edges.contains(&Edge::new(a, b))
    }

    pub fn domain_index(&self, name: &str) -> Option<usize> {
        self.domains.get(name).copied()
    }

    pub fn slot_value_index(&self, slot: &str, value: &str) -> Option<usize> {
        self.slot_values
            .get(&(slot.to_owned(), value.to_owned()))
            .copied()
    }

    pub fn nodes_of_kind(&self, kind: NodeKind) -> impl Iterator<Item = &Node> + '_ {
        self.nodes.iter().filter(move |n| n.kind == kind)
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges.iter().filter_map(move |e| match *e {
            Edge(a, b) if a == i => Some(b),
            Edge(a, b) if b == i => Some(a),
            _ => None,
        })
    }

    /// Dense 0/1 adjacency over all nodes.
    pub fn adjacency(&self) -> Vec<Vec<bool>> {
        adjacency_of(self.node_count(), self.edges.iter())
    }

    /// Number of domain / slot-value pairs that are not edges.
    pub fn non_edge_count(&self) -> usize {
        let d = self.nodes_of_kind(NodeKind::Domain).count();
        d * (self.node_count() - d) - self.edges.len()
    }

    pub fn write_edge_list<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for e in &self.edges {
            writeln!(w, "{e}")?;
        }
        Ok(())
    }

    pub fn write_node_table<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for n in &self.nodes {
            serde_json::to_writer(&mut w, n)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Reads a node table (JSONL) and an edge list (`i j` per line). Blank
    /// lines, `#` comments in the edge list, and JSON lines without an
    /// `index` field are skipped.
    pub fn read<N: BufRead, E: BufRead>(nodes: N, edges: E) -> Result<Self, GraphError> {
        let mut g = Self::new();
        for (i, line) in nodes.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| GraphError::Format {
                line: i + 1,
                msg: e.to_string(),
            })?;
            if value.get("index").is_none() {
                continue;
            }
            let node: Node = serde_json::from_value(value).map_err(|e| GraphError::Format {
                line: i + 1,
                msg: e.to_string(),
            })?;
            let bad = |msg: &str| GraphError::Format { line: i + 1, msg: msg.to_owned() };
            if node.index != g.nodes.len() {
                return Err(bad("node indices must be dense and ascending"));
            }
            let got = match node.kind {
                NodeKind::Domain => g.add_domain(&node.label),
                NodeKind::SlotValue => match (&node.slot, &node.value) {
                    (Some(s), Some(v)) => g.add_slot_value(s, v),
                    _ => {
                        let (s, v) = node.label.split_once('-').ok_or_else(|| bad("slot-value label without `-`"))?;
                        g.add_slot_value(s, v)
                    }
                },
            };
            if got != node.index {
                return Err(bad("duplicate node"));
            }
        }
        for (i, line) in edges.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |msg: String| GraphError::Format { line: i + 1, msg };
            let mut parts = line.split_whitespace().map(str::parse::<usize>);
            let (Some(Ok(a)), Some(Ok(b)), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(bad(format!("expected `i j`, got `{line}`")));
            };
            if a >= g.node_count() || b >= g.node_count() {
                return Err(bad(format!("edge {a} {b} refers to a missing node")));
            }
            if g.nodes[a].kind == g.nodes[b].kind {
                return Err(bad(format!("edge {a} {b} joins two nodes of the same kind")));
            }
            g.add_edge(a, b);
        }
        Ok(g)
    }
}

pub fn adjacency_of<'a, I: IntoIterator<Item = &'a Edge>>(n: usize, edges: I) -> Vec<Vec<bool>> {
    let mut adj = vec![vec![false; n]; n];
    for &Edge(a, b) in edges {
        adj[a][b] = true;
        adj[b][a] = true;
    }
    adj
}

/// n x n identity (one-hot) node features, row-major.
pub fn identity_features(g: &StateGraph) -> Vec<Vec<f64>> {
    let n = g.node_count();
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

/// Train / validation / test partition plus matched negatives.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeSplit {
    pub train: BTreeSet<Edge>,
    pub val: BTreeSet<Edge>,
    pub test: BTreeSet<Edge>,
    pub neg_val: BTreeSet<Edge>,
    pub neg_test: BTreeSet<Edge>,
    pub seed: u64,
}

/// Randomly partitions the edges of `g` and draws as many negatives as there
/// are validation and test edges.
///
/// Test and validation sizes are `round(|E| * frac)`, at least one each; the
/// training set takes the rest. Negatives are domain / slot-value pairs that
/// are not edges of `g`, drawn without replacement.
pub fn split_edges(
    g: &StateGraph,
    train_frac: f64,
    test_frac: f64,
    val_frac: f64,
    seed: u64,
) -> Result<EdgeSplit, GraphError> {
    let fracs_ok = [train_frac, test_frac, val_frac]
        .iter()
        .all(|f| f.is_finite() && *f > 0.0)
        && (train_frac + test_frac + val_frac - 1.0).abs() <= 1e-9;
    if !fracs_ok {
        return Err(GraphError::BadFractions(train_frac, test_frac, val_frac));
    }
    let total = g.edges.len();
    if total < 3 {
        return Err(GraphError::TooFewEdges { have: total, need: 3 });
    }

    let n_test = ((total as f64 * test_frac).round() as usize).max(1);
    let n_val = ((total as f64 * val_frac).round() as usize).max(1);
    if n_test + n_val >= total {
        return Err(GraphError::TooFewEdges { have: total, need: n_test + n_val + 1 });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges: Vec<Edge> = g.edges.iter().copied().collect();
    edges.shuffle(&mut rng);

    let test: BTreeSet<Edge> = edges[..n_test].iter().copied().collect();
    let val: BTreeSet<Edge> = edges[n_test..n_test + n_val].iter().copied().collect();
    let train: BTreeSet<Edge> = edges[n_test + n_val..].iter().copied().collect();

    let negs = sample_negatives(g, n_val + n_test, &BTreeSet::new(), &mut rng)?;
    let neg_val = negs[..n_val].iter().copied().collect();
    let neg_test = negs[n_val..].iter().copied().collect();

    Ok(EdgeSplit { train, val, test, neg_val, neg_test, seed })
}

/// Draws `count` distinct domain / slot-value non-edges of `g`, avoiding `exclude`.
pub fn sample_negatives<R: Rng>(
    g: &StateGraph,
    count: usize,
    exclude: &BTreeSet<Edge>,
    rng: &mut R,
) -> Result<Vec<Edge>, GraphError> {
    let domains: Vec<usize> = g.nodes_of_kind(NodeKind::Domain).map(|n| n.index).collect();
    let values: Vec<usize> = g.nodes_of_kind(NodeKind::SlotValue).map(|n| n.index).collect();
    let excluded_non_edges = exclude.iter().filter(|e| !g.edges.contains(e)).count();
    let available = g.non_edge_count().saturating_sub(excluded_non_edges);
    if available < count {
        return Err(GraphError::InsufficientNegatives { available, needed: count });
    }
    let usable = |e: &Edge| !g.edges.contains(e) && !exclude.contains(e);

    if available >= 4 * count {
        let mut seen = HashSet::with_capacity(count);
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let d = domains[rng.random_range(0..domains.len())];
            let v = values[rng.random_range(0..values.len())];
            let e = Edge::new(d, v);
            if usable(&e) && seen.insert(e) {
                out.push(e);
            }
        }
        Ok(out)
    } else {
        let mut pool: Vec<Edge> = domains
            .iter()
            .flat_map(|&d| values.iter().map(move |&v| Edge::new(d, v)))
            .filter(usable)
            .collect();
        pool.sort();
        pool.shuffle(rng);
        pool.truncate(count);
        Ok(pool)
    }
}

/// Nodes of `g` touched by `states`, plus labels that are not in the graph.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NodeLookup {
    pub nodes: BTreeSet<usize>,
    pub absent: Vec<String>,
}

pub fn dialogue_node_set<'a, I>(g: &StateGraph, states: I) -> NodeLookup
where
    I: IntoIterator<Item = &'a DialogueState>,
{
    let mut out = NodeLookup::default();
    let mut missing = BTreeSet::new();
    for state in states {
        for t in state.triples() {
            if t.value == NONE_VALUE {
                continue;
            }
            match g.domain_index(&t.domain) {
                Some(i) => {
                    out.nodes.insert(i);
                }
                None => {
                    missing.insert(format!("domain:{}", t.domain));
                }
            }
            match g.slot_value_index(&t.slot, &t.value) {
                Some(i) => {
                    out.nodes.insert(i);
                }
                None => {
                    missing.insert(format!("slot-value:{}-{}", t.slot, t.value));
                }
            }
        }
    }
    out.absent = missing.into_iter().collect();
    out
}

/// Synthetic graph with `domains` communities of `values_per_domain`
/// slot-value nodes each. A domain links to a value of its own community with
/// probability `p_in` and to any other value with probability `p_out`.
pub fn planted_graph(
    domains: usize,
    values_per_domain: usize,
    p_in: f64,
    p_out: f64,
    seed: u64,
) -> StateGraph {
    planted_communities(domains, 1, values_per_domain, p_in, p_out, seed)
}

/// [`planted_graph`] generalised to `domains_per_community` domain nodes in
/// each community. Domains are labelled `domain{i}` in creation order.
pub fn planted_communities(
    communities: usize,
    domains_per_community: usize,
    values_per_community: usize,
    p_in: f64,
    p_out: f64,
    seed: u64,
) -> StateGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = StateGraph::new();
    let mut domain_ids = Vec::with_capacity(communities * domains_per_community);
    for c in 0..communities {
        for _ in 0..domains_per_community {
            let i = domain_ids.len();
            domain_ids.push((c, g.add_domain(&format!("domain{i}"))));
        }
    }
    let mut value_ids = Vec::with_capacity(communities * values_per_community);
    for c in 0..communities {
        for v in 0..values_per_community {
            value_ids.push((c, g.add_slot_value(&format!("slot{c}"), &format!("value{v}"))));
        }
    }
    for &(vc, v) in &value_ids {
        for &(dc, dn) in &domain_ids {
            let p = if dc == vc { p_in } else { p_out };
            if rng.random_bool(p) {
                g.add_edge(dn, v);
            }
        }
    }
    g
}
