//! High-level pipeline steps shared by the CLI, the bindings, and the
//! acceptance suite: data loading, baseline training, and the
//! prune/quantize/cluster/joint flows.

use std::path::Path;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::admm::{
    self, toy::ToyLeastSquares, AdmmEngine, CompressionConfig, DiscreteKind, Mode, Phase,
};
use crate::config::{DataConfig, ModelConfig, RunConfig};
use crate::data::{load_mnist, synthetic_blobs_with_spread, Dataset, Split};
use crate::error::{Error, Result};
use crate::finalize::{self, ClusterRetrainReport, FreezeTrace, RetrainConfig, RetrainReport};
use crate::model::Codebook;
use crate::nn::Network;
use crate::optim::{EpochRunner, OptimizerState};
use crate::projection::{project_quantize, ClusterSpec, QuantSpec};
use crate::tensor::PruneMask;

/// Loads the configured dataset as a (train, test) pair.
pub fn load_data(cfg: &DataConfig, data_dir: &Path, seed: u64) -> Result<(Dataset, Dataset)> {
    match cfg {
        DataConfig::Mnist => load_mnist(data_dir),
        DataConfig::Synthetic {
            n,
            classes,
            dim,
            spread,
        } => {
            let all = synthetic_blobs_with_spread(*n, *classes, *dim, seed, spread.unwrap_or(0.02))?;
            let split_at = (*n * 4) / 5;
            let feature = all.feature_dim;
            let train = Dataset {
                images: all.images[..split_at * feature].to_vec(),
                labels: all.labels[..split_at].to_vec(),
                feature_dim: feature,
                classes: all.classes,
                split: Split::Train,
            };
            let test = Dataset {
                images: all.images[split_at * feature..].to_vec(),
                labels: all.labels[split_at..].to_vec(),
                feature_dim: feature,
                classes: all.classes,
                split: Split::Test,
            };
            Ok((train, test))
        }
    }
}

pub fn build_network(cfg: &ModelConfig, seed: u64) -> Result<Network> {
    match cfg {
        ModelConfig::Mlp { dims } => Network::mlp(dims, seed),
        ModelConfig::Lenet5 => Network::lenet5(seed),
        ModelConfig::LeastSquares { .. } => Err(Error::Config(
            "least-squares models run through the toy pipeline, not a network".into(),
        )),
    }
}

pub fn evaluate(net: &Network, data: &Dataset) -> Result<f64> {
    net.accuracy(&data.images, &data.labels, 512)
}

/// Plain baseline training; returns the final test accuracy.
pub fn train_baseline(
    net: &mut Network,
    train: &Dataset,
    test: &Dataset,
    cfg: &crate::config::TrainConfig,
    seed: u64,
) -> Result<f64> {
    let mut opt = OptimizerState::for_network(cfg.optimizer, net);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let runner = EpochRunner::new(train, cfg.batch_size);
    for epoch in 1..=cfg.epochs {
        let loss = runner.run_epoch(net, &mut opt, &mut rng, None, |_, _| {})?;
        if !loss.is_finite() {
            return Err(Error::Divergence {
                iteration: epoch,
                message: format!("non-finite baseline loss {}", loss),
            });
        }
    }
    evaluate(net, test)
}

/// Recovers prune masks from the zero pattern of a hard-projected net.
pub fn masks_from_zeros(net: &Network) -> Vec<PruneMask> {
    net.params()
        .iter()
        .map(|p| {
            let keep: Vec<bool> = p.weights.data().iter().map(|&v| v != 0.0).collect();
            PruneMask::new(p.weights.shape().to_vec(), keep).expect("shape matches")
        })
        .collect()
}

fn retrain_config(cfg: &RunConfig, max_epochs: usize) -> RetrainConfig {
    RetrainConfig {
        optimizer: cfg.finalize.optimizer,
        batch_size: cfg.finalize.batch_size,
        max_epochs,
        patience: cfg.finalize.patience,
        seed: cfg.seed ^ 0x5eed,
    }
}

pub struct PruneRun {
    pub outcome: admm::PruneOutcome,
    pub accuracy_before: f64,
    pub accuracy_after: f64,
}

/// Sequential ADMM pruning plus masked retraining.
pub fn run_prune(
    cfg: &RunConfig,
    net: &mut Network,
    train: &Dataset,
    test: &Dataset,
) -> Result<PruneRun> {
    let accuracy_before = evaluate(net, test)?;
    let ccfg = cfg.compression_config(net)?;
    let retrain = retrain_config(cfg, cfg.finalize.retrain_epochs);
    let outcome = admm::admm_prune(net, train, test, &ccfg, &retrain)?;
    let accuracy_after = evaluate(net, test)?;
    Ok(PruneRun {
        outcome,
        accuracy_before,
        accuracy_after,
    })
}

pub struct QuantizeRun {
    pub discretize: admm::DiscretizeOutcome,
    pub freeze_trace: FreezeTrace,
    pub codebooks: Vec<Codebook>,
    pub accuracy_before: f64,
    pub accuracy_after: f64,
}

/// ADMM quantization on a pruned net followed by iterative
/// freeze-and-retrain, ending with every survivor exactly on a level.
pub fn run_quantize(
    cfg: &RunConfig,
    net: &mut Network,
    masks: &[PruneMask],
    train: &Dataset,
    test: &Dataset,
) -> Result<QuantizeRun> {
    let accuracy_before = evaluate(net, test)?;
    let mut ccfg = cfg.compression_config(net)?;
    ccfg.kind = DiscreteKind::Quantize;
    let discretize = admm::admm_discretize(net, masks, train, &ccfg)?;
    let specs: Vec<QuantSpec> = discretize
        .quant_specs
        .iter()
        .map(|s| s.ok_or_else(|| Error::Config("quantize needs bits for every layer".into())))
        .collect::<Result<_>>()?;
    let retrain = retrain_config(cfg, cfg.finalize.freeze_retrain_epochs);
    let (_, freeze_trace) = finalize::iterative_quantize(
        net,
        masks,
        &specs,
        train,
        test,
        cfg.finalize.freeze_fraction,
        &retrain,
    )?;
    let codebooks = specs
        .iter()
        .enumerate()
        .map(|(t, spec)| Codebook::quant(t, spec, ccfg.layers[t].bits.unwrap()))
        .collect::<Result<Vec<_>>>()?;
    let accuracy_after = evaluate(net, test)?;
    Ok(QuantizeRun {
        discretize,
        freeze_trace,
        codebooks,
        accuracy_before,
        accuracy_after,
    })
}

pub struct ClusterRun {
    pub discretize: admm::DiscretizeOutcome,
    pub retrain: ClusterRetrainReport,
    pub codebooks: Vec<Codebook>,
    pub accuracy_before: f64,
    pub accuracy_after: f64,
}

/// ADMM clustering on a pruned net followed by centroid-only retraining.
pub fn run_cluster(
    cfg: &RunConfig,
    net: &mut Network,
    masks: &[PruneMask],
    train: &Dataset,
    test: &Dataset,
) -> Result<ClusterRun> {
    let accuracy_before = evaluate(net, test)?;
    let mut ccfg = cfg.compression_config(net)?;
    ccfg.kind = DiscreteKind::Cluster;
    let discretize = admm::admm_discretize(net, masks, train, &ccfg)?;
    let specs: Vec<ClusterSpec> = discretize
        .cluster_specs
        .iter()
        .map(|s| {
            s.clone()
                .ok_or_else(|| Error::Config("cluster needs bits for every layer".into()))
        })
        .collect::<Result<_>>()?;
    let retrain = retrain_config(cfg, cfg.finalize.cluster_retrain_epochs);
    let report = finalize::cluster_train_and_retrain(net, masks, &specs, train, test, &retrain)?;
    let codebooks = report
        .specs
        .iter()
        .enumerate()
        .map(|(t, spec)| Codebook::cluster(t, &spec.centroids, ccfg.layers[t].bits.unwrap()))
        .collect::<Result<Vec<_>>>()?;
    let accuracy_after = evaluate(net, test)?;
    Ok(ClusterRun {
        discretize,
        retrain: report,
        codebooks,
        accuracy_before,
        accuracy_after,
    })
}

pub struct JointRun {
    pub outcome: admm::JointOutcome,
    pub codebooks: Vec<Codebook>,
    pub masks: Vec<PruneMask>,
    pub accuracy_before: f64,
    pub accuracy_after: f64,
    pub retrain: RetrainReport,
}

/// Joint ADMM over both constraint families, then masked retraining and
/// discreteness finalization.
pub fn run_joint(
    cfg: &RunConfig,
    net: &mut Network,
    train: &Dataset,
    test: &Dataset,
) -> Result<JointRun> {
    let accuracy_before = evaluate(net, test)?;
    let ccfg = cfg.compression_config(net)?;
    let outcome = admm::admm_joint(net, train, &ccfg)?;
    let masks = outcome.masks.clone();
    let retrain = retrain_config(cfg, cfg.finalize.retrain_epochs);
    let retrain_report = finalize::masked_retrain(net, &masks, train, test, &retrain)?;

    let codebooks = match ccfg.kind {
        DiscreteKind::Quantize => {
            let specs: Vec<QuantSpec> = outcome
                .quant_specs
                .iter()
                .map(|s| s.ok_or_else(|| Error::Config("joint quantize needs bits".into())))
                .collect::<Result<_>>()?;
            let fin = retrain_config(cfg, cfg.finalize.freeze_retrain_epochs);
            finalize::iterative_quantize(
                net,
                &masks,
                &specs,
                train,
                test,
                cfg.finalize.freeze_fraction,
                &fin,
            )?;
            specs
                .iter()
                .enumerate()
                .map(|(t, spec)| Codebook::quant(t, spec, ccfg.layers[t].bits.unwrap()))
                .collect::<Result<Vec<_>>>()?
        }
        DiscreteKind::Cluster => {
            let specs: Vec<ClusterSpec> = outcome
                .cluster_specs
                .iter()
                .map(|s| s.clone().ok_or_else(|| Error::Config("joint cluster needs bits".into())))
                .collect::<Result<_>>()?;
            let fin = retrain_config(cfg, cfg.finalize.cluster_retrain_epochs);
            let report =
                finalize::cluster_train_and_retrain(net, &masks, &specs, train, test, &fin)?;
            report
                .specs
                .iter()
                .enumerate()
                .map(|(t, spec)| Codebook::cluster(t, &spec.centroids, ccfg.layers[t].bits.unwrap()))
                .collect::<Result<Vec<_>>>()?
        }
    };
    let accuracy_after = evaluate(net, test)?;
    Ok(JointRun {
        outcome,
        codebooks,
        masks,
        accuracy_before,
        accuracy_after,
        retrain: retrain_report,
    })
}

pub struct ToyRun {
    pub achieved_objective: f64,
    pub oracle_objective: f64,
    pub converged: bool,
    pub trace: admm::ResidualReport,
}

/// Runs the convex toy through the engine and compares against the
/// exhaustive oracle (best subset, optionally with quantized nonzeros).
pub fn run_toy(cfg: &RunConfig) -> Result<ToyRun> {
    let ModelConfig::LeastSquares {
        rows,
        vars,
        planted,
        noise,
    } = cfg.model
    else {
        return Err(Error::Config("toy pipeline needs a least_squares model".into()));
    };
    let mut toy = ToyLeastSquares::random(rows, vars, planted, noise, cfg.seed);
    if cfg.admm.layers.len() != 1 {
        return Err(Error::Config("toy pipeline uses exactly one layer target".into()));
    }
    let lt = &cfg.admm.layers[0];
    let alpha = lt
        .alpha
        .unwrap_or_else(|| ((vars as f64) * lt.alpha_frac.unwrap()).round() as usize);
    let ccfg = CompressionConfig {
        mode: cfg.admm.mode,
        kind: DiscreteKind::Quantize,
        layers: vec![admm::LayerTargets {
            alpha,
            bits: lt.bits,
            rho: lt.rho,
            eps: lt.eps,
        }],
        max_iters: cfg.admm.max_iters,
        epochs_per_iter: cfg.admm.epochs_per_iter,
        freeze_fraction: cfg.finalize.freeze_fraction,
        finalize_retrain_epochs: cfg.finalize.freeze_retrain_epochs,
        optimizer: cfg.admm.optimizer,
        batch_size: cfg.admm.batch_size,
        seed: cfg.seed,
    };

    match cfg.admm.mode {
        Mode::Sequential => {
            let outcome = AdmmEngine::new(&ccfg).run(&mut toy, Phase::Prune, None)?;
            let keep = outcome.states[0].mask.keep().to_vec();
            let (_, achieved) = toy.solve_on_support(&keep);
            let (_, oracle) = toy.best_subset(alpha);
            Ok(ToyRun {
                achieved_objective: achieved,
                oracle_objective: oracle,
                converged: outcome.converged,
                trace: outcome.trace,
            })
        }
        Mode::Joint => {
            let bits = lt
                .bits
                .ok_or_else(|| Error::Config("joint toy needs bits".into()))?;
            let outcome = AdmmEngine::new(&ccfg).run(&mut toy, Phase::Joint, None)?;
            let mask = outcome.states[0].mask.clone();
            let spec = outcome.states[0]
                .quant
                .ok_or_else(|| Error::Config("joint toy produced no interval".into()))?;
            let mut x = toy.x().clone();
            mask.apply(&mut x);
            let x = project_quantize(&x, &spec, &mask);
            let achieved = toy.objective(x.data());
            let oracle = toy.best_subset_quantized(alpha, 1usize << bits);
            Ok(ToyRun {
                achieved_objective: achieved,
                oracle_objective: oracle,
                converged: outcome.converged,
                trace: outcome.trace,
            })
        }
    }
}
