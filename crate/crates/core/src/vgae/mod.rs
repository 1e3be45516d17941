//! Variational graph auto-encoder with hand-written backpropagation.
//!
//! Encoder: `H = relu(Â X W_shared)`, `μ = Â H W_mu`, `log σ² = Â H W_logvar`.
//! Sampling: `Z = μ + exp(log σ² / 2) ⊙ ε` with `ε ~ N(0, I)`.
//! Decoder: `p(i ~ j) = σ(z_i · z_j)`.
//! Objective: weighted BCE over all ordered node pairs plus
//! `kl_weight · KL(q(Z | X, A) ‖ N(0, I)) / n`. [`reconstruction_loss`] is a
//! mean over the n² pairs and [`kl_divergence`] a mean over the n nodes, so
//! the extra `1 / n` keeps the two in the ratio of the summed ELBO
//! (`Σ_ij BCE_ij + Σ_i KL_i`, divided by n²). Without it the KL term
//! dominates on small graphs and the posterior collapses to the prior.

mod checkpoint;
mod matrix;
mod train;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use matrix::{dot, Matrix};
pub use train::{
    gradient_check, train, Adam, EpochRecord, TrainConfig, TrainError, TrainHistory, TrainingData,
};

/// Probabilities are clamped to `[PROB_FLOOR, 1 - PROB_FLOOR]` before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum VgaeError {
    #[error("adjacency matrix is not square ({0} x {1})")]
    NonSquare(usize, usize),
    #[error("adjacency matrix is not symmetric")]
    NotSymmetric,
    #[error("adjacency matrix has a self-loop at node {0}")]
    SelfLoop(usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("node index {index} out of range for {nodes} nodes")]
    IndexOutOfRange { index: usize, nodes: usize },
}

/// Encoder weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VgaeParams {
    pub w_shared: Matrix,
    pub w_mu: Matrix,
    pub w_logvar: Matrix,
}

impl VgaeParams {
    pub fn zeros(n_features: usize, hidden: usize, latent: usize) -> Self {
        Self {
            w_shared: Matrix::zeros(n_features, hidden),
            w_mu: Matrix::zeros(hidden, latent),
            w_logvar: Matrix::zeros(hidden, latent),
        }
    }

    /// Glorot-uniform initialization: `U(-r, r)` with `r = sqrt(6 / (fan_in + fan_out))`.
    pub fn glorot<R: Rng>(n_features: usize, hidden: usize, latent: usize, rng: &mut R) -> Self {
        Self {
            w_shared: glorot_matrix(n_features, hidden, rng),
            w_mu: glorot_matrix(hidden, latent, rng),
            w_logvar: glorot_matrix(hidden, latent, rng),
        }
    }

    pub fn n_features(&self) -> usize {
        self.w_shared.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_shared.cols()
    }

    pub fn latent_dim(&self) -> usize {
        self.w_mu.cols()
    }

    pub fn is_finite(&self) -> bool {
        self.w_shared.is_finite() && self.w_mu.is_finite() && self.w_logvar.is_finite()
    }

    fn check(&self) -> Result<(), VgaeError> {
        if self.w_mu.rows() != self.hidden_dim()
            || self.w_logvar.shape() != self.w_mu.shape()
        {
            return Err(VgaeError::DimensionMismatch(format!(
                "w_shared {:?}, w_mu {:?}, w_logvar {:?}",
                self.w_shared.shape(),
                self.w_mu.shape(),
                self.w_logvar.shape()
            )));
        }
        Ok(())
    }

    /// The three weight matrices in a fixed order.
    pub fn matrices(&self) -> [&Matrix; 3] {
        [&self.w_shared, &self.w_mu, &self.w_logvar]
    }

    pub fn matrices_mut(&mut self) -> [&mut Matrix; 3] {
        [&mut self.w_shared, &mut self.w_mu, &mut self.w_logvar]
    }
}

fn glorot_matrix<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    let r = (6.0 / (rows + cols) as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-r..r))
}

/// `D^(-1/2) (A + I) D^(-1/2)` where `D` is the degree matrix of `A + I`.
pub fn normalize_adjacency(adjacency: &[Vec<bool>]) -> Result<Matrix, VgaeError> {
    let n = adjacency.len();
    if let Some(row) = adjacency.iter().find(|r| r.len() != n) {
        return Err(VgaeError::NonSquare(n, row.len()));
    }
    for (i, row) in adjacency.iter().enumerate() {
        if row[i] {
            return Err(VgaeError::SelfLoop(i));
        }
        for (j, other) in adjacency.iter().enumerate().take(i) {
            if row[j] != other[i] {
                return Err(VgaeError::NotSymmetric);
            }
        }
    }
    let inv_sqrt_deg: Vec<f64> = adjacency
        .iter()
        .map(|row| 1.0 / ((row.iter().filter(|&&a| a).count() + 1) as f64).sqrt())
        .collect();
    Ok(Matrix::from_fn(n, n, |i, j| {
        if i == j || adjacency[i][j] {
            inv_sqrt_deg[i] * inv_sqrt_deg[j]
        } else {
            0.0
        }
    }))
}

/// Intermediate values of one encoder pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct Encoded {
    /// `Â X W_shared`, before the ReLU.
    pub pre_hidden: Matrix,
    /// `Â relu(pre_hidden)`.
    pub propagated: Matrix,
    pub mu: Matrix,
    pub logvar: Matrix,
}

/// Encoder pass given the precomputed product `Â X`.
pub(crate) fn encode_propagated(ax: &Matrix, norm_adj: &Matrix, params: &VgaeParams) -> Encoded {
    let pre_hidden = ax.matmul(&params.w_shared);
    let hidden = pre_hidden.map(|x| x.max(0.0));
    let propagated = norm_adj.matmul(&hidden);
    let mu = propagated.matmul(&params.w_mu);
    let logvar = propagated.matmul(&params.w_logvar);
    Encoded { pre_hidden, propagated, mu, logvar }
}

/// Returns `(μ, log σ²)`, each `n × latent`.
pub fn encode(
    features: &Matrix,
    norm_adj: &Matrix,
    params: &VgaeParams,
) -> Result<(Matrix, Matrix), VgaeError> {
    params.check()?;
    let n = norm_adj.rows();
    if norm_adj.cols() != n || features.rows() != n || features.cols() != params.n_features() {
        return Err(VgaeError::DimensionMismatch(format!(
            "features {:?}, adjacency {:?}, w_shared {:?}",
            features.shape(),
            norm_adj.shape(),
            params.w_shared.shape()
        )));
    }
    let enc = encode_propagated(&norm_adj.matmul(features), norm_adj, params);
    Ok((enc.mu, enc.logvar))
}

pub fn standard_normal<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// `μ + exp(log σ² / 2) ⊙ ε` for a given noise matrix.
pub fn reparameterize_with(mu: &Matrix, logvar: &Matrix, eps: &Matrix) -> Result<Matrix, VgaeError> {
    if mu.shape() != logvar.shape() || mu.shape() != eps.shape() {
        return Err(VgaeError::DimensionMismatch(format!(
            "mu {:?}, logvar {:?}, noise {:?}",
            mu.shape(),
            logvar.shape(),
            eps.shape()
        )));
    }
    let std = logvar.map(|lv| (0.5 * lv).exp());
    Ok(mu.zip_map(&std.zip_map(eps, |s, e| s * e), |m, se| m + se))
}

/// Draws `ε` from `rng` and applies [`reparameterize_with`].
pub fn reparameterize<R: Rng>(mu: &Matrix, logvar: &Matrix, rng: &mut R) -> Result<Matrix, VgaeError> {
    if mu.shape() != logvar.shape() {
        return Err(VgaeError::DimensionMismatch(format!(
            "mu {:?}, logvar {:?}",
            mu.shape(),
            logvar.shape()
        )));
    }
    let eps = standard_normal(mu.rows(), mu.cols(), rng);
    reparameterize_with(mu, logvar, &eps)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `σ(z_i · z_j)`.
pub fn decode_edge(z: &Matrix, i: usize, j: usize) -> Result<f64, VgaeError> {
    let nodes = z.rows();
    for index in [i, j] {
        if index >= nodes {
            return Err(VgaeError::IndexOutOfRange { index, nodes });
        }
    }
    Ok(sigmoid(dot(z.row(i), z.row(j))))
}

/// Mean over all `n²` ordered pairs of
/// `-w·A_ij·log p_ij - (1 - A_ij)·log(1 - p_ij)` with `p_ij = σ(z_i · z_j)`
/// clamped to `[1e-12, 1 - 1e-12]` and `w = pos_weight`.
///
/// # Panics
/// If `pos_weight` is not positive or the shapes disagree.
pub fn reconstruction_loss(labels: &Matrix, z: &Matrix, pos_weight: f64) -> f64 {
    let logits = z.matmul_t(z);
    bce_with_grad(labels, &logits, pos_weight, false).0
}

/// BCE value and, when asked, `∂loss/∂logits`.
pub(crate) fn bce_with_grad(
    labels: &Matrix,
    logits: &Matrix,
    pos_weight: f64,
    want_grad: bool,
) -> (f64, Option<Matrix>) {
    assert!(pos_weight > 0.0, "pos_weight must be positive");
    assert_eq!(labels.shape(), logits.shape(), "labels and logits differ in shape");
    let count = (labels.rows() * labels.cols()) as f64;
    let mut grad = want_grad.then(|| Matrix::zeros(labels.rows(), labels.cols()));
    let mut total = 0.0;
    for (k, (&a, &s)) in labels.as_slice().iter().zip(logits.as_slice()).enumerate() {
        let p = sigmoid(s);
        let clamped = !(PROB_FLOOR..=1.0 - PROB_FLOOR).contains(&p);
        let pc = p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
        total += -pos_weight * a * pc.ln() - (1.0 - a) * (1.0 - pc).ln();
        if let Some(g) = grad.as_mut() {
            g.as_mut_slice()[k] = if clamped {
                0.0
            } else {
                (-pos_weight * a * (1.0 - p) + (1.0 - a) * p) / count
            };
        }
    }
    (total / count, grad)
}

/// `-0.5 · mean_i Σ_d (1 + log σ² - μ² - σ²)`.
pub fn kl_divergence(mu: &Matrix, logvar: &Matrix) -> Result<f64, VgaeError> {
    if mu.shape() != logvar.shape() {
        return Err(VgaeError::DimensionMismatch(format!(
            "mu {:?}, logvar {:?}",
            mu.shape(),
            logvar.shape()
        )));
    }
    if mu.rows() == 0 {
        return Ok(0.0);
    }
    // -(1 + lv - m² - e^lv) = m² + (expm1(lv) - lv); both parts are >= 0
    let sum: f64 = mu
        .as_slice()
        .iter()
        .zip(logvar.as_slice())
        .map(|(&m, &lv)| m * m + (lv.exp_m1() - lv))
        .sum();
    Ok(0.5 * sum / mu.rows() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub bce: f64,
    pub kl: f64,
    pub total: f64,
}

/// Weight gradients, same shapes as [`VgaeParams`].
pub type Gradients = VgaeParams;

/// Total loss and its analytic gradient for fixed noise `eps`.
pub fn loss_and_gradients(
    data: &TrainingData,
    params: &VgaeParams,
    eps: &Matrix,
    kl_weight: f64,
) -> (LossParts, Gradients) {
    let n = data.node_count() as f64;
    let beta = kl_scale(kl_weight, data.node_count());
    let enc = encode_propagated(&data.ax, &data.norm_adj, params);
    let std = enc.logvar.map(|lv| (0.5 * lv).exp());
    let z = enc.mu.zip_map(&std.zip_map(eps, |s, e| s * e), |m, se| m + se);
    let logits = z.matmul_t(&z);

    let (bce, d_logits) = bce_with_grad(&data.labels, &logits, data.pos_weight, true);
    let d_logits = d_logits.unwrap();
    let kl = kl_divergence(&enc.mu, &enc.logvar).unwrap();

    // logits = Z Zᵀ
    let mut sym = d_logits.clone();
    sym.add_assign(&d_logits.transpose());
    let d_z = sym.matmul(&z);

    let d_mu = d_z.zip_map(&enc.mu, |g, m| g + beta * m / n);
    let d_logvar = Matrix::from_fn(z.rows(), z.cols(), |i, j| {
        let lv = enc.logvar[(i, j)];
        d_z[(i, j)] * eps[(i, j)] * 0.5 * std[(i, j)] + beta * 0.5 * lv.exp_m1() / n
    });

    let w_mu = enc.propagated.t_matmul(&d_mu);
    let w_logvar = enc.propagated.t_matmul(&d_logvar);

    let mut d_prop = d_mu.matmul_t(&params.w_mu);
    d_prop.add_assign(&d_logvar.matmul_t(&params.w_logvar));
    let d_hidden = data.norm_adj.t_matmul(&d_prop);
    let d_pre = d_hidden.zip_map(&enc.pre_hidden, |g, x| if x > 0.0 { g } else { 0.0 });
    let w_shared = data.ax.t_matmul(&d_pre);

    (
        LossParts { bce, kl, total: bce + beta * kl },
        Gradients { w_shared, w_mu, w_logvar },
    )
}

/// Total loss only, for fixed noise `eps`.
pub fn total_loss(data: &TrainingData, params: &VgaeParams, eps: &Matrix, kl_weight: f64) -> LossParts {
    let enc = encode_propagated(&data.ax, &data.norm_adj, params);
    let z = reparameterize_with(&enc.mu, &enc.logvar, eps).expect("noise shape matches");
    let logits = z.matmul_t(&z);
    let bce = bce_with_grad(&data.labels, &logits, data.pos_weight, false).0;
    let kl = kl_divergence(&enc.mu, &enc.logvar).unwrap();
    LossParts { bce, kl, total: bce + kl_scale(kl_weight, data.node_count()) * kl }
}

/// Coefficient of [`kl_divergence`] in the training objective.
pub fn kl_scale(kl_weight: f64, nodes: usize) -> f64 {
    kl_weight / nodes.max(1) as f64
}

/// Mean embeddings `μ` (no sampling), used for evaluation and ranking.
pub fn embed(data_features: &Matrix, norm_adj: &Matrix, params: &VgaeParams) -> Result<Matrix, VgaeError> {
    encode(data_features, norm_adj, params).map(|(mu, _)| mu)
}
