//! SGD and Adam for the training subproblems and all retraining phases.
//!
//! Both optimizers honor an optional binary mask: masked-out entries are
//! left bit-identical, and for Adam their moments are frozen as well so a
//! later unmask cannot produce stale-moment jumps.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{shuffled_indices, Dataset};
use crate::error::{Error, Result};
use crate::nn::{LayerGrads, Network};
use crate::tensor::PruneMask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f32,
    #[serde(default = "default_beta1")]
    pub beta1: f32,
    #[serde(default = "default_beta2")]
    pub beta2: f32,
    #[serde(default = "default_eps")]
    pub eps: f32,
}

fn default_beta1() -> f32 {
    0.9
}
fn default_beta2() -> f32 {
    0.999
}
fn default_eps() -> f32 {
    1e-8
}

impl OptimizerConfig {
    pub fn sgd(lr: f32) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }

    pub fn adam(lr: f32) -> Self {
        Self {
            kind: OptimizerKind::Adam,
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }
}

struct Moments {
    m: Vec<f32>,
    v: Vec<f32>,
}

/// Optimizer state over a fixed set of parameter tensors (slots).
pub struct OptimizerState {
    config: OptimizerConfig,
    step: u64,
    moments: Vec<Moments>,
}

impl OptimizerState {
    /// `sizes` lists the element count of each parameter tensor that will
    /// be passed to `update`, in slot order.
    pub fn new(config: OptimizerConfig, sizes: &[usize]) -> Self {
        let moments = sizes
            .iter()
            .map(|&n| Moments {
                m: vec![0.0; n],
                v: vec![0.0; n],
            })
            .collect();
        Self {
            config,
            step: 0,
            moments,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn lr(&self) -> f32 {
        self.config.lr
    }

    pub fn set_lr(&mut self, lr: f32) {
        self.config.lr = lr;
    }

    /// Starts one optimizer step covering every slot. Must be called once
    /// before the per-slot `update` calls of that step.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    /// Applies the update rule to one parameter tensor.
    pub fn update(
        &mut self,
        slot: usize,
        param: &mut [f32],
        grad: &[f32],
        mask: Option<&[bool]>,
    ) -> Result<()> {
        if grad.len() != param.len() {
            return Err(Error::Config(format!(
                "grad len {} != param len {}",
                grad.len(),
                param.len()
            )));
        }
        if let Some(m) = mask {
            if m.len() != param.len() {
                return Err(Error::Config(format!(
                    "mask len {} != param len {}",
                    m.len(),
                    param.len()
                )));
            }
        }
        let lr = self.config.lr;
        match self.config.kind {
            OptimizerKind::Sgd => {
                match mask {
                    Some(keep) => {
                        for ((p, &g), &k) in param.iter_mut().zip(grad).zip(keep) {
                            if k {
                                *p -= lr * g;
                            }
                        }
                    }
                    None => {
                        for (p, &g) in param.iter_mut().zip(grad) {
                            *p -= lr * g;
                        }
                    }
                }
            }
            OptimizerKind::Adam => {
                let OptimizerConfig { beta1, beta2, eps, .. } = self.config;
                let t = self.step.max(1) as i32;
                let bc1 = 1.0 - beta1.powi(t);
                let bc2 = 1.0 - beta2.powi(t);
                let mom = &mut self.moments[slot];
                debug_assert_eq!(mom.m.len(), param.len(), "slot size mismatch");
                for i in 0..param.len() {
                    if let Some(keep) = mask {
                        if !keep[i] {
                            continue;
                        }
                    }
                    let g = grad[i];
                    mom.m[i] = beta1 * mom.m[i] + (1.0 - beta1) * g;
                    mom.v[i] = beta2 * mom.v[i] + (1.0 - beta2) * g * g;
                    let m_hat = mom.m[i] / bc1;
                    let v_hat = mom.v[i] / bc2;
                    param[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
        Ok(())
    }
}

impl OptimizerState {
    /// Optimizer over a network's parameters: slot 2t holds layer t's
    /// weights, slot 2t+1 its bias.
    pub fn for_network(config: OptimizerConfig, net: &Network) -> Self {
        let mut sizes = Vec::with_capacity(2 * net.trainable_count());
        for p in net.params() {
            sizes.push(p.weights.numel());
            sizes.push(p.bias.numel());
        }
        Self::new(config, &sizes)
    }

    /// One optimizer step over every trainable layer. `masks` freeze
    /// pruned weight entries; biases are never masked.
    pub fn step_network(
        &mut self,
        net: &mut Network,
        grads: &[LayerGrads],
        masks: Option<&[PruneMask]>,
    ) -> Result<()> {
        if grads.len() != net.trainable_count() {
            return Err(Error::Config(format!(
                "got {} gradient sets for {} trainable layers",
                grads.len(),
                net.trainable_count()
            )));
        }
        self.begin_step();
        let keeps: Vec<Option<Vec<bool>>> = match masks {
            Some(ms) => ms.iter().map(|m| Some(m.keep().to_vec())).collect(),
            None => (0..grads.len()).map(|_| None).collect(),
        };
        for (t, g) in grads.iter().enumerate() {
            let p = &mut net.params_mut()[t];
            self.update(
                2 * t,
                p.weights.data_mut(),
                g.d_weights.data(),
                keeps[t].as_deref(),
            )?;
            self.update(2 * t + 1, p.bias.data_mut(), g.d_bias.data(), None)?;
        }
        Ok(())
    }
}

/// Seeded-shuffle minibatch training over one dataset.
pub struct EpochRunner<'a> {
    pub data: &'a Dataset,
    pub batch_size: usize,
}

impl<'a> EpochRunner<'a> {
    pub fn new(data: &'a Dataset, batch_size: usize) -> Self {
        Self { data, batch_size }
    }

    /// Runs one epoch and returns the mean training loss (data term only).
    ///
    /// The gradient hook runs after backprop on every minibatch and may
    /// add penalty terms in place; with a no-op hook and no masks this is
    /// plain training.
    pub fn run_epoch<F>(
        &self,
        net: &mut Network,
        opt: &mut OptimizerState,
        rng: &mut ChaCha8Rng,
        masks: Option<&[PruneMask]>,
        mut grad_hook: F,
    ) -> Result<f64>
    where
        F: FnMut(&Network, &mut [LayerGrads]),
    {
        let order = shuffled_indices(self.data.len(), rng);
        let mut batch = Vec::new();
        let mut labels = Vec::new();
        let mut total = 0.0f64;
        let mut batches = 0usize;
        for chunk in order.chunks(self.batch_size) {
            self.data.gather(chunk, &mut batch, &mut labels);
            let (loss, mut grads) = net.loss_and_grads(&batch, chunk.len(), &labels)?;
            total += loss;
            batches += 1;
            grad_hook(net, &mut grads);
            opt.step_network(net, &grads, masks)?;
        }
        Ok(if batches > 0 { total / batches as f64 } else { 0.0 })
    }
}
