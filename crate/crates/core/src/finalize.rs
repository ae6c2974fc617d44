//! Post-ADMM exactness procedures: masked retraining after pruning,
//! iterative freeze-and-retrain quantization, and cluster hardening with
//! centroid-only retraining.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::Network;
use crate::optim::{EpochRunner, OptimizerConfig, OptimizerState};
use crate::projection::{project_cluster, ClusterSpec, QuantSpec};
use crate::tensor::PruneMask;

/// Knobs shared by the retraining phases.
#[derive(Debug, Clone, Copy)]
pub struct RetrainConfig {
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Evaluations without improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct RetrainReport {
    pub entry_accuracy: f64,
    pub final_accuracy: f64,
    pub epochs_run: usize,
}

/// Retrains the surviving weights under fixed masks, returning the best
/// checkpoint by evaluation accuracy. Pruned entries stay exactly zero,
/// and the result never scores below the entry state.
pub fn masked_retrain(
    net: &mut Network,
    masks: &[PruneMask],
    train: &Dataset,
    eval: &Dataset,
    cfg: &RetrainConfig,
) -> Result<RetrainReport> {
    let entry_accuracy = net.accuracy(&eval.images, &eval.labels, 512)?;
    if cfg.max_epochs == 0 {
        return Ok(RetrainReport {
            entry_accuracy,
            final_accuracy: entry_accuracy,
            epochs_run: 0,
        });
    }

    let mut opt = OptimizerState::for_network(cfg.optimizer, net);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let runner = EpochRunner::new(train, cfg.batch_size);

    let mut best_accuracy = entry_accuracy;
    let mut best_params = net.params().to_vec();
    let mut since_best = 0usize;
    let mut epochs_run = 0usize;
    for epoch in 1..=cfg.max_epochs {
        let loss = runner.run_epoch(net, &mut opt, &mut rng, Some(masks), |_, _| {})?;
        if !loss.is_finite() {
            return Err(Error::Divergence {
                iteration: epoch,
                message: format!("non-finite retraining loss {}", loss),
            });
        }
        epochs_run = epoch;
        let acc = net.accuracy(&eval.images, &eval.labels, 512)?;
        if acc > best_accuracy {
            best_accuracy = acc;
            best_params = net.params().to_vec();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    net.params_mut().clone_from_slice(&best_params);
    Ok(RetrainReport {
        entry_accuracy,
        final_accuracy: best_accuracy,
        epochs_run,
    })
}

/// Per-layer freeze bookkeeping for iterative quantization.
#[derive(Debug, Clone)]
pub struct FreezeState {
    /// True once a weight is pinned to its level. Indexed flat per layer;
    /// pruned positions are never free.
    pub frozen: Vec<Vec<bool>>,
    /// Frozen counts per level per layer (levels in ascending order).
    pub per_level_counts: Vec<Vec<usize>>,
    pub iteration: usize,
}

impl FreezeState {
    fn new(masks: &[PruneMask], specs: &[QuantSpec]) -> Self {
        let frozen = masks.iter().map(|m| vec![false; m.len()]).collect();
        let per_level_counts = specs.iter().map(|s| vec![0usize; s.m]).collect();
        Self {
            frozen,
            per_level_counts,
            iteration: 0,
        }
    }

    pub fn frozen_count(&self) -> usize {
        self.frozen
            .iter()
            .map(|f| f.iter().filter(|&&x| x).count())
            .sum()
    }
}

/// One row of the freeze/accuracy trace emitted per iteration.
#[derive(Debug, Clone)]
pub struct FreezeTraceRow {
    pub iteration: usize,
    pub frozen: usize,
    pub free: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Default)]
pub struct FreezeTrace {
    pub rows: Vec<FreezeTraceRow>,
}

impl FreezeTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,frozen,free,accuracy\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.iteration, r.frozen, r.free, r.accuracy
            ));
        }
        out
    }
}

/// Iterative freeze-and-retrain quantization.
///
/// Each iteration pins, per quantization level, the given fraction of the
/// still-free weights nearest that level (weights already sitting exactly
/// on a level are pinned for free), then retrains the remaining free
/// weights. Once fewer than 1% of the survivors remain free, the rest are
/// frozen outright. With fraction 1.0 this is single-shot projection.
pub fn iterative_quantize(
    net: &mut Network,
    masks: &[PruneMask],
    specs: &[QuantSpec],
    train: &Dataset,
    eval: &Dataset,
    freeze_fraction: f64,
    cfg: &RetrainConfig,
) -> Result<(FreezeState, FreezeTrace)> {
    if !(freeze_fraction > 0.0 && freeze_fraction <= 1.0) {
        return Err(Error::Config("freeze fraction must be in (0, 1]".into()));
    }
    if masks.len() != net.trainable_count() || specs.len() != net.trainable_count() {
        return Err(Error::Config(
            "masks/specs must cover every trainable layer".into(),
        ));
    }

    let survivors: usize = masks.iter().map(|m| m.count_ones()).sum();
    let mut state = FreezeState::new(masks, specs);
    let mut trace = FreezeTrace::default();
    let mut opt = OptimizerState::for_network(cfg.optimizer, net);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let runner = EpochRunner::new(train, cfg.batch_size);

    loop {
        state.iteration += 1;

        // Freeze pass: per layer, per level, pin the fraction of free
        // weights nearest that level.
        for t in 0..net.trainable_count() {
            let spec = &specs[t];
            let levels = spec.levels();
            let keep = masks[t].keep();
            let mut buckets: Vec<Vec<(f32, usize)>> = vec![Vec::new(); levels.len()];
            {
                let w = net.params()[t].weights.data();
                for (i, &k) in keep.iter().enumerate() {
                    if !k || state.frozen[t][i] {
                        continue;
                    }
                    let target = spec.nearest_level(w[i]);
                    let li = levels
                        .iter()
                        .position(|&l| l == target)
                        .expect("nearest level is in the level set");
                    buckets[li].push(((w[i] - target).abs(), i));
                }
            }
            for (li, mut bucket) in buckets.into_iter().enumerate() {
                if bucket.is_empty() {
                    continue;
                }
                bucket.sort_unstable_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
                let mut take = ((bucket.len() as f64) * freeze_fraction).ceil() as usize;
                take = take.max(1).min(bucket.len());
                // Anything already exactly on the level quantizes for free.
                while take < bucket.len() && bucket[take].0 == 0.0 {
                    take += 1;
                }
                let w = net.params_mut()[t].weights.data_mut();
                for &(_, i) in bucket.iter().take(take) {
                    w[i] = levels[li];
                    state.frozen[t][i] = true;
                    state.per_level_counts[t][li] += 1;
                }
            }
        }

        let frozen = state.frozen_count();
        let free = survivors - frozen;

        // Termination: freeze the stragglers once almost everything is
        // pinned.
        if (free as f64) < 0.01 * survivors as f64 {
            for t in 0..net.trainable_count() {
                let spec = &specs[t];
                let levels = spec.levels();
                let keep = masks[t].keep();
                let w = net.params_mut()[t].weights.data_mut();
                for (i, &k) in keep.iter().enumerate() {
                    if k && !state.frozen[t][i] {
                        let target = spec.nearest_level(w[i]);
                        let li = levels.iter().position(|&l| l == target).unwrap();
                        w[i] = target;
                        state.frozen[t][i] = true;
                        state.per_level_counts[t][li] += 1;
                    }
                }
            }
            let accuracy = net.accuracy(&eval.images, &eval.labels, 512)?;
            trace.rows.push(FreezeTraceRow {
                iteration: state.iteration,
                frozen: survivors,
                free: 0,
                accuracy,
            });
            break;
        }

        // Retrain the free weights: prune mask AND not frozen.
        let retrain_masks: Vec<PruneMask> = (0..net.trainable_count())
            .map(|t| {
                let keep: Vec<bool> = masks[t]
                    .keep()
                    .iter()
                    .zip(&state.frozen[t])
                    .map(|(&k, &f)| k && !f)
                    .collect();
                PruneMask::new(masks[t].shape().to_vec(), keep).unwrap()
            })
            .collect();
        for epoch in 0..cfg.max_epochs {
            let loss = runner.run_epoch(net, &mut opt, &mut rng, Some(&retrain_masks), |_, _| {})?;
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    iteration: state.iteration,
                    message: format!("non-finite loss in freeze retraining epoch {}", epoch),
                });
            }
        }

        let accuracy = net.accuracy(&eval.images, &eval.labels, 512)?;
        trace.rows.push(FreezeTraceRow {
            iteration: state.iteration,
            frozen,
            free,
            accuracy,
        });
    }
    Ok((state, trace))
}

#[derive(Debug, Clone)]
pub struct ClusterRetrainReport {
    pub entry_accuracy: f64,
    pub final_accuracy: f64,
    pub specs: Vec<ClusterSpec>,
}

/// Hardens every layer onto its cluster centroids, then retrains only the
/// centroid values: each centroid moves by the summed gradient of its
/// member weights and all members move together, so within-cluster
/// equality stays bit-exact. Assignments are frozen throughout.
pub fn cluster_train_and_retrain(
    net: &mut Network,
    masks: &[PruneMask],
    specs: &[ClusterSpec],
    train: &Dataset,
    eval: &Dataset,
    cfg: &RetrainConfig,
) -> Result<ClusterRetrainReport> {
    if masks.len() != net.trainable_count() || specs.len() != net.trainable_count() {
        return Err(Error::Config(
            "masks/specs must cover every trainable layer".into(),
        ));
    }

    // Hard assignment: every surviving weight takes its cluster mean.
    let mut live_specs = Vec::with_capacity(specs.len());
    for t in 0..net.trainable_count() {
        let (projected, spec) = project_cluster(&net.params()[t].weights, &specs[t], &masks[t])?;
        net.params_mut()[t].weights = projected;
        live_specs.push(spec);
    }

    let entry_accuracy = net.accuracy(&eval.images, &eval.labels, 512)?;
    let mut best_accuracy = entry_accuracy;
    let mut best_params = net.params().to_vec();
    let mut best_specs = live_specs.clone();

    let lr = cfg.optimizer.lr;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut batch = Vec::new();
    let mut labels = Vec::new();
    for epoch in 1..=cfg.max_epochs {
        let order = crate::data::shuffled_indices(train.len(), &mut rng);
        let mut epoch_loss = 0.0f64;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            train.gather(chunk, &mut batch, &mut labels);
            let (loss, grads) = net.loss_and_grads(&batch, chunk.len(), &labels)?;
            epoch_loss += loss;
            batches += 1;

            for t in 0..net.trainable_count() {
                let spec = &mut live_specs[t];
                // Summed gradient per centroid over its member weights.
                let mut centroid_grads = vec![0.0f64; spec.centroids.len()];
                {
                    let keep = masks[t].keep();
                    let gw = grads[t].d_weights.data();
                    let mut vi = 0usize;
                    for (i, &k) in keep.iter().enumerate() {
                        if k {
                            centroid_grads[spec.assignment[vi] as usize] += gw[i] as f64;
                            vi += 1;
                        }
                    }
                }
                for (c, g) in spec.centroids.iter_mut().zip(&centroid_grads) {
                    *c -= lr * *g as f32;
                }
                // Move all members with their centroid, bit-exact.
                let keep = masks[t].keep();
                let w = net.params_mut()[t].weights.data_mut();
                let mut vi = 0usize;
                for (i, &k) in keep.iter().enumerate() {
                    if k {
                        w[i] = spec.centroids[spec.assignment[vi] as usize];
                        vi += 1;
                    }
                }
                // Biases are unconstrained; plain SGD.
                let b = net.params_mut()[t].bias.data_mut();
                for (bi, &g) in b.iter_mut().zip(grads[t].d_bias.data()) {
                    *bi -= lr * g;
                }
            }
        }
        if batches > 0 && !epoch_loss.is_finite() {
            return Err(Error::Divergence {
                iteration: epoch,
                message: "non-finite loss in centroid retraining".into(),
            });
        }
        let acc = net.accuracy(&eval.images, &eval.labels, 512)?;
        if acc > best_accuracy {
            best_accuracy = acc;
            best_params = net.params().to_vec();
            best_specs = live_specs.clone();
        }
    }

    net.params_mut().clone_from_slice(&best_params);
    Ok(ClusterRetrainReport {
        entry_accuracy,
        final_accuracy: best_accuracy,
        specs: best_specs,
    })
}
