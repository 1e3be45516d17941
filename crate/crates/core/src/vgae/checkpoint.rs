use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Matrix, TrainConfig, VgaeParams};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("unsupported checkpoint format version {0}")]
    Version(u32),
    #[error("weight `{0}` does not match the stored dimensions")]
    Shape(&'static str),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// JSON model file: dimensions, training config and row-major weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub n_features: usize,
    pub hidden_dim: usize,
    pub latent_dim: usize,
    pub seed: u64,
    pub config: TrainConfig,
    pub w_shared: Vec<f64>,
    pub w_mu: Vec<f64>,
    pub w_logvar: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<serde_json::Value>,
}

impl Checkpoint {
    pub fn new(params: &VgaeParams, config: &TrainConfig) -> Self {
        Self {
            format_version: CHECKPOINT_VERSION,
            n_features: params.n_features(),
            hidden_dim: params.hidden_dim(),
            latent_dim: params.latent_dim(),
            seed: config.seed,
            config: config.clone(),
            w_shared: params.w_shared.as_slice().to_vec(),
            w_mu: params.w_mu.as_slice().to_vec(),
            w_logvar: params.w_logvar.as_slice().to_vec(),
            provenance: None,
        }
    }

    pub fn params(&self) -> Result<VgaeParams, CheckpointError> {
        if self.format_version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version(self.format_version));
        }
        let m = |data: &[f64], rows, cols, name| {
            Matrix::from_vec(rows, cols, data.to_vec()).ok_or(CheckpointError::Shape(name))
        };
        Ok(VgaeParams {
            w_shared: m(&self.w_shared, self.n_features, self.hidden_dim, "w_shared")?,
            w_mu: m(&self.w_mu, self.hidden_dim, self.latent_dim, "w_mu")?,
            w_logvar: m(&self.w_logvar, self.hidden_dim, self.latent_dim, "w_logvar")?,
        })
    }

    pub fn to_json(&self) -> Result<String, CheckpointError> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}
