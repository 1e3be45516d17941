//! Link-prediction scoring and next-state candidate ranking.

use std::collections::BTreeSet;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset_io::kfold_split;
use crate::state_graph::{sample_negatives, Edge, EdgeSplit, GraphError, NodeKind, StateGraph};
use crate::vgae::{decode_edge, train, Matrix, TrainConfig, TrainError, TrainingData, VgaeError, VgaeParams};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("scores and labels differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("AUC needs at least one positive and one negative label")]
    DegenerateLabels,
    #[error("average precision needs at least one positive label")]
    NoPositives,
    #[error("no context nodes to rank candidates for")]
    EmptyContext,
    #[error("model expects {expected} nodes, graph has {actual}")]
    NodeCountMismatch { expected: usize, actual: usize },
    #[error("{have} edges cannot fill {k} folds")]
    TooFewEdges { have: usize, k: usize },
    #[error(transparent)]
    Model(#[from] VgaeError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Rank-based ROC AUC: the chance a random positive outscores a random
/// negative, ties counting one half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64, EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch(scores.len(), labels.len()));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(EvalError::DegenerateLabels);
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // sum of (1-based, tie-averaged) ranks of the positives
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let avg_rank = (start + 1 + end) as f64 / 2.0;
        let pos_in_group = order[start..end].iter().filter(|&&i| labels[i]).count();
        rank_sum += avg_rank * pos_in_group as f64;
        start = end;
    }
    let p = positives as f64;
    let u = rank_sum - p * (p + 1.0) / 2.0;
    Ok(u / (p * negatives as f64))
}

/// Mean, over positives in descending-score order, of precision at each
/// positive's rank. Equal scores keep their input order.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64, EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch(scores.len(), labels.len()));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return Err(EvalError::NoPositives);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut hits = 0usize;
    let mut sum = 0.0;
    for (k, &i) in order.iter().enumerate() {
        if labels[i] {
            hits += 1;
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    Ok(sum / positives as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkScores {
    pub auc: f64,
    pub ap: f64,
}

/// Scores `pos` and `neg` pairs and returns AUC and AP. Pairs are scored in
/// ascending edge order, which fixes the AP tie order independently of labels.
pub fn score_edges(z: &Matrix, pos: &BTreeSet<Edge>, neg: &BTreeSet<Edge>) -> Result<LinkScores, EvalError> {
    let mut labelled: Vec<(Edge, bool)> = pos
        .iter()
        .map(|&e| (e, true))
        .chain(neg.iter().map(|&e| (e, false)))
        .collect();
    labelled.sort();
    let scores = labelled
        .iter()
        .map(|(e, _)| decode_edge(z, e.0, e.1))
        .collect::<Result<Vec<_>, _>>()?;
    let labels: Vec<bool> = labelled.iter().map(|(_, l)| *l).collect();
    Ok(LinkScores {
        auc: auc(&scores, &labels)?,
        ap: average_precision(&scores, &labels)?,
    })
}

fn check_nodes(params: &VgaeParams, graph: &StateGraph) -> Result<(), EvalError> {
    if params.n_features() != graph.node_count() {
        return Err(EvalError::NodeCountMismatch {
            expected: params.n_features(),
            actual: graph.node_count(),
        });
    }
    Ok(())
}

/// Test-split AUC / AP using mean embeddings over the training edges.
pub fn evaluate_split(params: &VgaeParams, graph: &StateGraph, split: &EdgeSplit) -> Result<LinkScores, EvalError> {
    check_nodes(params, graph)?;
    let z = TrainingData::new(graph, &split.train)?.embed(params);
    score_edges(&z, &split.test, &split.neg_test)
}

/// Same as [`evaluate_split`] on the validation edges.
pub fn evaluate_validation(params: &VgaeParams, graph: &StateGraph, split: &EdgeSplit) -> Result<LinkScores, EvalError> {
    check_nodes(params, graph)?;
    let z = TrainingData::new(graph, &split.train)?.embed(params);
    score_edges(&z, &split.val, &split.neg_val)
}

/// A scored domain / slot-value pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredEdge {
    pub domain: usize,
    pub slot_value: usize,
    pub domain_label: String,
    pub slotvalue_label: String,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<bool>,
}

impl fmt::Display for ScoredEdge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Node pair: (['{}'], ['{}']), Probability: {:.4}",
            self.domain_label, self.slotvalue_label, self.score
        )
    }
}

/// Ranks domain / slot-value pairs that are not yet edges, for the domains
/// in `context_nodes`. When the context holds no domain node, the domains
/// adjacent to its slot-value nodes are used. Embeddings are mean
/// embeddings over every edge of `graph`. Returns at most `top_k` pairs by
/// descending probability; ties keep ascending `(domain, slot_value)` order.
pub fn rank_candidates(
    params: &VgaeParams,
    graph: &StateGraph,
    context_nodes: &BTreeSet<usize>,
    top_k: usize,
) -> Result<Vec<ScoredEdge>, EvalError> {
    if context_nodes.is_empty() {
        return Err(EvalError::EmptyContext);
    }
    check_nodes(params, graph)?;
    let z = TrainingData::new(graph, graph.edges())?.embed(params);
    Ok(rank_with_embeddings(&z, graph, context_nodes, top_k))
}

/// [`rank_candidates`] with precomputed embeddings.
pub fn rank_with_embeddings(
    z: &Matrix,
    graph: &StateGraph,
    context_nodes: &BTreeSet<usize>,
    top_k: usize,
) -> Vec<ScoredEdge> {
    let mut domains: BTreeSet<usize> = context_nodes
        .iter()
        .copied()
        .filter(|&i| graph.node(i).kind == NodeKind::Domain)
        .collect();
    if domains.is_empty() {
        domains = context_nodes
            .iter()
            .flat_map(|&i| graph.neighbors(i).collect::<Vec<_>>())
            .collect();
    }

    let mut scored = Vec::new();
    for &d in &domains {
        for v in graph.nodes_of_kind(NodeKind::SlotValue) {
            if graph.has_edge(d, v.index) {
                continue;
            }
            let score = decode_edge(z, d, v.index).expect("node indices are in range");
            scored.push(ScoredEdge {
                domain: d,
                slot_value: v.index,
                domain_label: graph.node(d).label.clone(),
                slotvalue_label: v.label.clone(),
                score,
                label: None,
            });
        }
    }
    scored.sort_by(|a, b| b.score.total_cmp(&a.score));
    scored.truncate(top_k);
    scored
}

/// One line of the candidate output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub dialogue_id: String,
    pub domain_label: String,
    pub slotvalue_label: String,
    pub probability: f64,
    pub rank: usize,
}

impl CandidateRecord {
    pub fn from_ranked(dialogue_id: &str, ranked: &[ScoredEdge]) -> Vec<Self> {
        ranked
            .iter()
            .enumerate()
            .map(|(i, s)| Self {
                dialogue_id: dialogue_id.to_owned(),
                domain_label: s.domain_label.clone(),
                slotvalue_label: s.slotvalue_label.clone(),
                probability: s.score,
                rank: i + 1,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub fold_auc: Vec<f64>,
    pub fold_ap: Vec<f64>,
    pub mean_auc: f64,
    /// Population standard deviation over folds.
    pub std_auc: f64,
    pub mean_ap: f64,
    pub std_ap: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Edge-level k-fold cross-validation: each fold is held out in turn, the
/// model is trained on the remaining edges and scored on the fold against as
/// many sampled non-edges.
pub fn cross_validate(graph: &StateGraph, k: usize, config: &TrainConfig) -> Result<CvReport, EvalError> {
    let edges: Vec<Edge> = graph.edges().iter().copied().collect();
    if k < 2 || edges.len() < k {
        return Err(EvalError::TooFewEdges { have: edges.len(), k });
    }
    let folds = kfold_split(&edges, k, config.seed).map_err(|_| EvalError::TooFewEdges { have: edges.len(), k })?;

    let mut fold_auc = Vec::with_capacity(k);
    let mut fold_ap = Vec::with_capacity(k);
    for (f, fold) in folds.iter().enumerate() {
        let test: BTreeSet<Edge> = fold.iter().copied().collect();
        let train_edges: BTreeSet<Edge> = edges.iter().copied().filter(|e| !test.contains(e)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(f as u64 + 1));
        let neg_test: BTreeSet<Edge> = sample_negatives(graph, test.len(), &BTreeSet::new(), &mut rng)?
            .into_iter()
            .collect();
        let split = EdgeSplit {
            train: train_edges,
            val: BTreeSet::new(),
            test,
            neg_val: BTreeSet::new(),
            neg_test,
            seed: config.seed,
        };
        let (params, _) = train(graph, &split, config)?;
        let scores = evaluate_split(&params, graph, &split)?;
        log::info!("fold {f}: auc {:.4} ap {:.4}", scores.auc, scores.ap);
        fold_auc.push(scores.auc);
        fold_ap.push(scores.ap);
    }
    let (mean_auc, std_auc) = mean_std(&fold_auc);
    let (mean_ap, std_ap) = mean_std(&fold_ap);
    Ok(CvReport { fold_auc, fold_ap, mean_auc, std_auc, mean_ap, std_ap })
}
