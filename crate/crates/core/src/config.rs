//! Run configuration files (JSON) and the run summary schema.
//!
//! Configs are schema-validated before any compute; unknown keys are
//! rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::admm::{DiscreteKind, LayerResiduals, LayerTargets, Mode};
use crate::error::{Error, Result};
use crate::model::RatioReport;
use crate::nn::Network;
use crate::optim::OptimizerConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub recipe: String,
    pub seed: u64,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub admm: AdmmConfig,
    pub finalize: FinalizeConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    /// Standard MNIST IDX files under the --data-dir directory.
    Mnist,
    /// Deterministic Gaussian blobs, split 80/20 into train/test.
    Synthetic {
        n: usize,
        classes: usize,
        dim: usize,
        #[serde(default)]
        spread: Option<f32>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    Mlp { dims: Vec<usize> },
    Lenet5,
    /// Convex reference problem with exhaustive oracles.
    LeastSquares {
        rows: usize,
        vars: usize,
        planted: usize,
        noise: f64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub epochs: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerTargetConfig {
    /// Absolute retained count; exclusive with alpha_frac.
    #[serde(default)]
    pub alpha: Option<usize>,
    /// Retained fraction of the layer's weight count.
    #[serde(default)]
    pub alpha_frac: Option<f64>,
    #[serde(default)]
    pub bits: Option<u32>,
    pub rho: f32,
    #[serde(default)]
    pub eps: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdmmConfig {
    pub mode: Mode,
    pub kind: DiscreteKind,
    pub max_iters: usize,
    pub epochs_per_iter: usize,
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub layers: Vec<LayerTargetConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinalizeConfig {
    pub freeze_fraction: f64,
    /// Masked-retrain epoch budget after pruning.
    pub retrain_epochs: usize,
    /// Retraining epochs between freeze steps.
    pub freeze_retrain_epochs: usize,
    /// Centroid-only retraining epochs.
    pub cluster_retrain_epochs: usize,
    pub patience: usize,
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.train.batch_size == 0 || self.admm.batch_size == 0 || self.finalize.batch_size == 0
        {
            return Err(Error::Schema("batch sizes must be >= 1".into()));
        }
        if !(self.finalize.freeze_fraction > 0.0 && self.finalize.freeze_fraction <= 1.0) {
            return Err(Error::Schema("finalize.freeze_fraction must be in (0, 1]".into()));
        }
        for (i, l) in self.admm.layers.iter().enumerate() {
            match (l.alpha, l.alpha_frac) {
                (Some(_), Some(_)) => {
                    return Err(Error::Schema(format!(
                        "admm.layers[{}]: alpha and alpha_frac are exclusive",
                        i
                    )))
                }
                (None, None) => {
                    return Err(Error::Schema(format!(
                        "admm.layers[{}]: one of alpha or alpha_frac is required",
                        i
                    )))
                }
                (None, Some(f)) if !(0.0..=1.0).contains(&f) => {
                    return Err(Error::Schema(format!(
                        "admm.layers[{}]: alpha_frac {} outside [0, 1]",
                        i, f
                    )))
                }
                _ => {}
            }
            if l.rho.is_nan() || l.rho < 0.0 {
                return Err(Error::Schema(format!("admm.layers[{}]: rho must be >= 0", i)));
            }
        }
        Ok(())
    }

    /// Resolves the per-layer targets against an actual network, turning
    /// fractions into counts.
    pub fn layer_targets(&self, net: &Network) -> Result<Vec<LayerTargets>> {
        if self.admm.layers.len() != net.trainable_count() {
            return Err(Error::Config(format!(
                "config lists {} layers but the model has {} trainable layers",
                self.admm.layers.len(),
                net.trainable_count()
            )));
        }
        Ok(self
            .admm
            .layers
            .iter()
            .zip(net.params())
            .map(|(l, p)| {
                let numel = p.weights.numel();
                let alpha = l
                    .alpha
                    .unwrap_or_else(|| ((numel as f64) * l.alpha_frac.unwrap()).round() as usize)
                    .min(numel);
                LayerTargets {
                    alpha,
                    bits: l.bits,
                    rho: l.rho,
                    eps: l.eps,
                }
            })
            .collect())
    }

    pub fn compression_config(&self, net: &Network) -> Result<crate::admm::CompressionConfig> {
        Ok(crate::admm::CompressionConfig {
            mode: self.admm.mode,
            kind: self.admm.kind,
            layers: self.layer_targets(net)?,
            max_iters: self.admm.max_iters,
            epochs_per_iter: self.admm.epochs_per_iter,
            freeze_fraction: self.finalize.freeze_fraction,
            finalize_retrain_epochs: self.finalize.freeze_retrain_epochs,
            optimizer: self.admm.optimizer,
            batch_size: self.admm.batch_size,
            seed: self.seed,
        })
    }
}

/// Volatile fields kept out of the deterministic part of a summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Timing {
    pub started_at_unix: u64,
    pub elapsed_seconds: f64,
}

/// The JSON summary each subcommand writes.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct RunSummary {
    pub recipe: String,
    pub command: String,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy_before: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy_after: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_layer_nonzeros: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_layer_alpha: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_residuals: Option<Vec<LayerResiduals>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub converged: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ratios: Option<RatioReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_objective: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub achieved_objective: Option<f64>,
    /// Wall-clock details; the only non-deterministic field.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timing: Option<Timing>,
}

impl RunSummary {
    pub fn new(recipe: &str, command: &str, seed: u64) -> Self {
        Self {
            recipe: recipe.to_string(),
            command: command.to_string(),
            seed,
            ..Default::default()
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }
}
