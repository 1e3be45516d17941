use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    decode_edge, encode_propagated, loss_and_gradients, normalize_adjacency, standard_normal,
    total_loss, Gradients, Matrix, VgaeError, VgaeParams,
};
use crate::link_eval::auc;
use crate::state_graph::{adjacency_of, Edge, EdgeSplit, StateGraph};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub hidden_dim: usize,
    pub latent_dim: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub kl_weight: f64,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 32,
            latent_dim: 16,
            learning_rate: 0.01,
            epochs: 200,
            kl_weight: 1.0,
            seed: 42,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub bce: f64,
    pub kl: f64,
    pub total: f64,
    /// AUC on the validation edges after this epoch's update, if there are any.
    pub val_auc: Option<f64>,
}

pub type TrainHistory = Vec<EpochRecord>;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("the training edge set is empty")]
    EmptyTrainSet,
    #[error("invalid config: {0}")]
    Config(String),
    #[error("loss became non-finite at epoch {epoch}")]
    Diverged { epoch: usize, history: TrainHistory },
    #[error(transparent)]
    Model(#[from] VgaeError),
}

/// Everything the loss needs that does not change during training.
#[derive(Debug, Clone)]
pub struct TrainingData {
    pub features: Matrix,
    pub norm_adj: Matrix,
    /// `Â X`
    pub ax: Matrix,
    /// Reconstruction target: training adjacency plus self-loops.
    pub labels: Matrix,
    /// `#zero labels / #one labels`
    pub pos_weight: f64,
}

impl TrainingData {
    /// Identity features and the adjacency of `visible_edges` only.
    pub fn new(graph: &StateGraph, visible_edges: &BTreeSet<Edge>) -> Result<Self, VgaeError> {
        let n = graph.node_count();
        let adjacency = adjacency_of(n, visible_edges.iter());
        let norm_adj = normalize_adjacency(&adjacency)?;
        let features = Matrix::identity(n);
        let ax = norm_adj.matmul(&features);
        let labels = Matrix::from_fn(n, n, |i, j| if i == j || adjacency[i][j] { 1.0 } else { 0.0 });
        let ones = labels.sum();
        let zeros = (n * n) as f64 - ones;
        let pos_weight = if ones > 0.0 && zeros > 0.0 { zeros / ones } else { 1.0 };
        Ok(Self { features, norm_adj, ax, labels, pos_weight })
    }

    pub fn node_count(&self) -> usize {
        self.labels.rows()
    }

    /// Mean embeddings under this data's adjacency.
    pub fn embed(&self, params: &VgaeParams) -> Matrix {
        encode_propagated(&self.ax, &self.norm_adj, params).mu
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    step: i32,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    pub fn new(params: &VgaeParams, config: &TrainConfig) -> Self {
        let zeros: Vec<Matrix> = params
            .matrices()
            .iter()
            .map(|m| Matrix::zeros(m.rows(), m.cols()))
            .collect();
        Self {
            lr: config.learning_rate,
            beta1: config.adam_beta1,
            beta2: config.adam_beta2,
            epsilon: config.adam_epsilon,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, params: &mut VgaeParams, grads: &Gradients) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        for (k, (w, g)) in params.matrices_mut().into_iter().zip(grads.matrices()).enumerate() {
            let m = self.m[k].as_mut_slice();
            let v = self.v[k].as_mut_slice();
            for (idx, (w, &g)) in w.as_mut_slice().iter_mut().zip(g.as_slice()).enumerate() {
                m[idx] = self.beta1 * m[idx] + (1.0 - self.beta1) * g;
                v[idx] = self.beta2 * v[idx] + (1.0 - self.beta2) * g * g;
                let m_hat = m[idx] / bc1;
                let v_hat = v[idx] / bc2;
                *w -= self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
    }
}

fn validate(config: &TrainConfig) -> Result<(), TrainError> {
    let bad = |m: &str| Err(TrainError::Config(m.to_owned()));
    if config.hidden_dim == 0 || config.latent_dim == 0 {
        return bad("hidden_dim and latent_dim must be positive");
    }
    if !(config.learning_rate > 0.0 && config.learning_rate.is_finite()) {
        return bad("learning_rate must be positive");
    }
    if !(config.kl_weight > 0.0 && config.kl_weight.is_finite()) {
        return bad("kl_weight must be positive");
    }
    if !(0.0..1.0).contains(&config.adam_beta1) || !(0.0..1.0).contains(&config.adam_beta2) {
        return bad("adam betas must lie in [0, 1)");
    }
    if config.adam_epsilon <= 0.0 {
        return bad("adam_epsilon must be positive");
    }
    Ok(())
}

fn pair_auc(z: &Matrix, pos: &BTreeSet<Edge>, neg: &BTreeSet<Edge>) -> Option<f64> {
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    let mut scores = Vec::with_capacity(pos.len() + neg.len());
    let mut labels = Vec::with_capacity(pos.len() + neg.len());
    for (set, label) in [(pos, true), (neg, false)] {
        for e in set {
            scores.push(decode_edge(z, e.0, e.1).ok()?);
            labels.push(label);
        }
    }
    auc(&scores, &labels).ok()
}

/// Fits encoder weights on the training edges of `split`.
///
/// Validation and test edges are hidden from the encoder and from the
/// reconstruction target. Weights start Glorot-uniform and the noise for every
/// epoch comes from one ChaCha stream seeded with `config.seed`, so the whole
/// run is reproducible bit for bit. Each history record holds the loss at the
/// start of its epoch.
pub fn train(
    graph: &StateGraph,
    split: &EdgeSplit,
    config: &TrainConfig,
) -> Result<(VgaeParams, TrainHistory), TrainError> {
    validate(config)?;
    if split.train.is_empty() {
        return Err(TrainError::EmptyTrainSet);
    }
    let data = TrainingData::new(graph, &split.train)?;
    let n = data.node_count();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = VgaeParams::glorot(n, config.hidden_dim, config.latent_dim, &mut rng);
    let mut adam = Adam::new(&params, config);
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let eps = standard_normal(n, config.latent_dim, &mut rng);
        let (loss, grads) = loss_and_gradients(&data, &params, &eps, config.kl_weight);
        if !loss.total.is_finite() || !grads.is_finite() {
            log::warn!("training diverged at epoch {epoch}");
            return Err(TrainError::Diverged { epoch, history });
        }
        adam.step(&mut params, &grads);
        let val_auc = pair_auc(&data.embed(&params), &split.val, &split.neg_val);
        log::debug!("epoch {epoch}: total {:.6} bce {:.6} kl {:.6}", loss.total, loss.bce, loss.kl);
        history.push(EpochRecord { epoch, bce: loss.bce, kl: loss.kl, total: loss.total, val_auc });
    }
    Ok((params, history))
}

/// Largest relative error between analytic and central-difference gradients
/// of the total loss over a random subset of weight entries.
///
/// The noise matrix is drawn once from `config.seed` and kept fixed. At least
/// 50 entries are checked (all of them when there are fewer). Relative error
/// is `|a - f| / max(|a|, |f|)`; entries where both are below `1e-10` count
/// as zero error.
///
/// # Panics
/// If `epsilon` is outside `[1e-7, 1e-3]`.
pub fn gradient_check(
    params: &VgaeParams,
    graph: &StateGraph,
    split: &EdgeSplit,
    config: &TrainConfig,
    epsilon: f64,
) -> f64 {
    assert!((1e-7..=1e-3).contains(&epsilon), "epsilon must lie in [1e-7, 1e-3]");
    let data = TrainingData::new(graph, &split.train).expect("graph adjacency is valid");
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let eps = standard_normal(data.node_count(), params.latent_dim(), &mut rng);
    let (_, grads) = loss_and_gradients(&data, params, &eps, config.kl_weight);

    let sizes: Vec<usize> = params.matrices().iter().map(|m| m.as_slice().len()).collect();
    let total: usize = sizes.iter().sum();
    let picks = sample(&mut rng, total, total.min(64)).into_vec();

    let mut worst: f64 = 0.0;
    for flat in picks {
        let (which, idx) = locate(&sizes, flat);
        let analytic = grads.matrices()[which].as_slice()[idx];

        let mut plus = params.clone();
        plus.matrices_mut()[which].as_mut_slice()[idx] += epsilon;
        let mut minus = params.clone();
        minus.matrices_mut()[which].as_mut_slice()[idx] -= epsilon;
        let numeric = (total_loss(&data, &plus, &eps, config.kl_weight).total
            - total_loss(&data, &minus, &eps, config.kl_weight).total)
            / (2.0 * epsilon);

        let scale = analytic.abs().max(numeric.abs());
        if scale >= 1e-10 {
            worst = worst.max((analytic - numeric).abs() / scale);
        }
    }
    worst
}

fn locate(sizes: &[usize], mut flat: usize) -> (usize, usize) {
    for (k, &s) in sizes.iter().enumerate() {
        if flat < s {
            return (k, flat);
        }
        flat -= s;
    }
    unreachable!("index within total size")
}
