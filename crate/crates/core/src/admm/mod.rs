//! The ADMM iteration driver.
//!
//! Each iteration trains the augmented loss (subproblem 1), projects the
//! auxiliary variables onto the sparsity set (Z) and the discreteness set
//! (Y), applies the dual updates
//!
//!   U <- U + W - Z,   V <- V + W - Y,
//!
//! and records the squared Frobenius residuals ||W-Z||, ||W-Y|| and the
//! auxiliary drifts used for convergence. Sequential mode runs the two
//! constraint families one after the other; joint mode runs both at once.

pub mod toy;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{LayerGrads, Network};
use crate::optim::{EpochRunner, OptimizerConfig, OptimizerState};
use crate::projection::{
    fit_interval, init_centroids, project_cluster, project_quantize, project_sparsity,
    ClusterSpec, QuantSpec,
};
use crate::tensor::{PruneMask, WeightTensor};

/// Which discreteness constraint the engine enforces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscreteKind {
    Quantize,
    Cluster,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Joint,
    Sequential,
}

/// Per-layer compression targets.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LayerTargets {
    /// Retained nonzero count for the layer.
    pub alpha: usize,
    /// Bits for discreteness (level count 2^bits). None disables the
    /// discreteness constraint for this layer (the "infinite levels"
    /// sentinel).
    pub bits: Option<u32>,
    /// Penalty parameter rho.
    pub rho: f32,
    /// Convergence tolerance. None picks 1e-3 * ||W||_F^2 at init.
    pub eps: Option<f64>,
}

impl LayerTargets {
    pub fn levels(&self) -> Option<usize> {
        self.bits.map(|n| 1usize << n)
    }
}

/// Engine-level configuration: per-layer targets plus the phase schedule.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompressionConfig {
    pub mode: Mode,
    pub kind: DiscreteKind,
    pub layers: Vec<LayerTargets>,
    /// Maximum ADMM iterations per phase.
    pub max_iters: usize,
    /// Subproblem-1 training epochs per ADMM iteration.
    pub epochs_per_iter: usize,
    /// Algorithm-2 freeze fraction per iteration, applied per level.
    pub freeze_fraction: f64,
    /// Retraining epochs between freeze steps (and for centroid retraining).
    pub finalize_retrain_epochs: usize,
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub seed: u64,
}

impl CompressionConfig {
    pub fn validate(&self, weight_numels: &[usize]) -> Result<()> {
        if self.layers.len() != weight_numels.len() {
            return Err(Error::Config(format!(
                "{} layer targets for {} trainable layers",
                self.layers.len(),
                weight_numels.len()
            )));
        }
        for (i, (t, &numel)) in self.layers.iter().zip(weight_numels).enumerate() {
            if t.alpha > numel {
                return Err(Error::Config(format!(
                    "layer {}: alpha {} exceeds weight count {}",
                    i, t.alpha, numel
                )));
            }
            if t.rho.is_nan() || t.rho < 0.0 {
                return Err(Error::Config(format!("layer {}: rho must be >= 0", i)));
            }
            if let Some(eps) = t.eps {
                if eps.is_nan() || eps <= 0.0 {
                    return Err(Error::Config(format!("layer {}: eps must be > 0", i)));
                }
            }
            if let Some(bits) = t.bits {
                if bits == 0 || bits > 16 {
                    return Err(Error::Config(format!(
                        "layer {}: bits {} out of range 1..=16",
                        i, bits
                    )));
                }
            }
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if !(self.freeze_fraction > 0.0 && self.freeze_fraction <= 1.0) {
            return Err(Error::Config("freeze fraction must be in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Per-layer ADMM bundle. The live parameters W and b stay inside the
/// model owned by the subproblem solver; this holds the auxiliaries.
#[derive(Debug, Clone)]
pub struct LayerState {
    pub z: Option<WeightTensor>,
    pub u: Option<WeightTensor>,
    pub y: Option<WeightTensor>,
    pub v: Option<WeightTensor>,
    pub mask: PruneMask,
    pub quant: Option<QuantSpec>,
    pub cluster: Option<ClusterSpec>,
}

/// Squared-Frobenius residuals of one layer at one iteration. Inactive
/// constraint families are None.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LayerResiduals {
    pub w_z: Option<f64>,
    pub z_drift: Option<f64>,
    pub w_y: Option<f64>,
    pub y_drift: Option<f64>,
}

impl LayerResiduals {
    fn max_active(&self) -> f64 {
        [self.w_z, self.z_drift, self.w_y, self.y_drift]
            .iter()
            .flatten()
            .cloned()
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationResiduals {
    pub iteration: usize,
    pub train_loss: f64,
    pub layers: Vec<LayerResiduals>,
}

/// Residual trace across iterations, one row per (iteration, layer).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ResidualReport {
    pub iterations: Vec<IterationResiduals>,
}

impl ResidualReport {
    pub fn len(&self) -> usize {
        self.iterations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.iterations.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,layer,w_z,z_drift,w_y,y_drift\n");
        let fmt = |v: Option<f64>| v.map(|x| format!("{:e}", x)).unwrap_or_default();
        for it in &self.iterations {
            for (l, r) in it.layers.iter().enumerate() {
                out.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    it.iteration,
                    l,
                    fmt(r.w_z),
                    fmt(r.z_drift),
                    fmt(r.w_y),
                    fmt(r.y_drift)
                ));
            }
        }
        out
    }
}

/// True iff every active residual family of every layer in the latest
/// iteration is at or below that layer's tolerance.
pub fn check_convergence(trace: &ResidualReport, eps: &[f64]) -> bool {
    let Some(last) = trace.iterations.last() else {
        return false;
    };
    last.layers
        .iter()
        .zip(eps)
        .all(|(r, &e)| r.max_active() <= e)
}

/// Penalty context for one layer of subproblem 1.
pub struct LayerPenalty<'a> {
    pub rho: f32,
    /// (Z, U) when the sparsity term is active.
    pub sparsity: Option<(&'a WeightTensor, &'a WeightTensor)>,
    /// (Y, V) when the discreteness term is active.
    pub discreteness: Option<(&'a WeightTensor, &'a WeightTensor)>,
}

/// Adds the quadratic penalty gradients rho*(W - Z + U) and
/// rho*(W - Y + V) to `grads` and returns the penalty's loss
/// contribution sum(rho/2 * ||.||^2).
pub fn add_penalty_grads(
    weights: &[&WeightTensor],
    penalties: &[LayerPenalty<'_>],
    grads: &mut [LayerGrads],
) -> f64 {
    let mut penalty_loss = 0.0f64;
    for ((w, pen), g) in weights.iter().zip(penalties).zip(grads.iter_mut()) {
        if pen.rho == 0.0 {
            continue;
        }
        let rho = pen.rho;
        for (target, dual) in [pen.sparsity, pen.discreteness].into_iter().flatten() {
            let gw = g.d_weights.data_mut();
            let mut term = 0.0f64;
            for i in 0..gw.len() {
                let r = w.data()[i] - target.data()[i] + dual.data()[i];
                gw[i] += rho * r;
                term += (r as f64) * (r as f64);
            }
            penalty_loss += 0.5 * rho as f64 * term;
        }
    }
    penalty_loss
}

/// Augmented loss and gradients for a network: the data loss plus the
/// active quadratic penalty terms. With every rho zero the result is
/// bit-identical to `Network::loss_and_grads`.
pub fn augmented_grads(
    net: &Network,
    input: &[f32],
    batch: usize,
    labels: &[u8],
    penalties: &[LayerPenalty<'_>],
) -> Result<(f64, Vec<LayerGrads>)> {
    if penalties.len() != net.trainable_count() {
        return Err(Error::Config(format!(
            "{} penalties for {} trainable layers",
            penalties.len(),
            net.trainable_count()
        )));
    }
    let (loss, mut grads) = net.loss_and_grads(input, batch, labels)?;
    let weights: Vec<&WeightTensor> = net.params().iter().map(|p| &p.weights).collect();
    let penalty_loss = add_penalty_grads(&weights, penalties, &mut grads);
    Ok((loss + penalty_loss, grads))
}

/// A model whose weights the engine can read, overwrite, and train under
/// quadratic penalties. Implemented by networks and by the convex toy
/// problem used for oracle checks.
pub trait SubproblemSolver {
    fn layer_count(&self) -> usize;
    fn weights(&self, layer: usize) -> &WeightTensor;
    fn set_weights(&mut self, layer: usize, w: WeightTensor) -> Result<()>;
    /// Runs one subproblem-1 pass (one epoch for networks, an exact solve
    /// for the toy). `masks`, when present, freeze pruned entries.
    fn solve_subproblem(
        &mut self,
        penalties: &[LayerPenalty<'_>],
        masks: Option<&[PruneMask]>,
    ) -> Result<f64>;
}

/// Which constraint families one engine phase enforces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// Sparsity only (the sequential formulation's first step).
    Prune,
    /// Discreteness only, on a fixed prune mask.
    Discretize,
    /// Both families at once.
    Joint,
}

/// Result of one engine phase.
pub struct AdmmOutcome {
    pub states: Vec<LayerState>,
    pub trace: ResidualReport,
    pub converged: bool,
    pub eps: Vec<f64>,
}

impl AdmmOutcome {
    pub fn masks(&self) -> Vec<PruneMask> {
        self.states.iter().map(|s| s.mask.clone()).collect()
    }
}

pub struct AdmmEngine<'a> {
    config: &'a CompressionConfig,
}

impl<'a> AdmmEngine<'a> {
    pub fn new(config: &'a CompressionConfig) -> Self {
        Self { config }
    }

    /// Runs one ADMM phase to convergence or `max_iters`.
    ///
    /// For `Phase::Discretize` the caller supplies the fixed masks from
    /// the pruning phase; pruned weights stay exactly zero because the
    /// solver updates only the surviving entries.
    pub fn run<S: SubproblemSolver>(
        &self,
        solver: &mut S,
        phase: Phase,
        fixed_masks: Option<Vec<PruneMask>>,
    ) -> Result<AdmmOutcome> {
        self.run_observed(solver, phase, fixed_masks, |_, _, _: &S| {})
    }

    /// `run` with a per-iteration observer called after the dual updates,
    /// used to assert the algebraic iteration identities in tests.
    pub fn run_observed<S, F>(
        &self,
        solver: &mut S,
        phase: Phase,
        fixed_masks: Option<Vec<PruneMask>>,
        mut observer: F,
    ) -> Result<AdmmOutcome>
    where
        S: SubproblemSolver,
        F: FnMut(usize, &[LayerState], &S),
    {
        let cfg = self.config;
        let n_layers = solver.layer_count();
        let numels: Vec<usize> = (0..n_layers).map(|l| solver.weights(l).numel()).collect();
        cfg.validate(&numels)?;

        let sparsity_active = matches!(phase, Phase::Prune | Phase::Joint);
        let discrete_active = matches!(phase, Phase::Discretize | Phase::Joint);
        if matches!(phase, Phase::Discretize) && fixed_masks.is_none() {
            return Err(Error::Config(
                "discretize phase needs the masks from pruning".into(),
            ));
        }

        // Initialization: duals at zero, auxiliaries as projections of the
        // starting weights so iteration-1 penalties are meaningful.
        let mut states: Vec<LayerState> = Vec::with_capacity(n_layers);
        let mut eps = Vec::with_capacity(n_layers);
        for l in 0..n_layers {
            let w = solver.weights(l);
            let t = &cfg.layers[l];
            eps.push(t.eps.unwrap_or(1e-3 * w.norm_sq()));

            let (z, u, mask) = if sparsity_active {
                let (z, mask) = project_sparsity(w, t.alpha)?;
                (
                    Some(z),
                    Some(WeightTensor::zeros(w.shape().to_vec())),
                    mask,
                )
            } else {
                (
                    None,
                    None,
                    fixed_masks
                        .as_ref()
                        .map(|m| m[l].clone())
                        .unwrap_or_else(|| PruneMask::all_ones(w.shape().to_vec())),
                )
            };

            let discrete_here = discrete_active && t.bits.is_some();
            let (y, v, quant, cluster) = if discrete_here {
                let levels = t.levels().unwrap();
                match cfg.kind {
                    DiscreteKind::Quantize => {
                        let q = fit_interval(w, &mask, levels)?;
                        let spec = QuantSpec::new(levels, q)?;
                        let y = project_quantize(w, &spec, &mask);
                        (
                            Some(y),
                            Some(WeightTensor::zeros(w.shape().to_vec())),
                            Some(spec),
                            None,
                        )
                    }
                    DiscreteKind::Cluster => {
                        let init = init_centroids(w, &mask, levels, cfg.seed ^ l as u64)?;
                        let spec = ClusterSpec::new(levels, init.centroids)?;
                        let (y, spec) = project_cluster(w, &spec, &mask)?;
                        (
                            Some(y),
                            Some(WeightTensor::zeros(w.shape().to_vec())),
                            None,
                            Some(spec),
                        )
                    }
                }
            } else {
                (None, None, None, None)
            };

            states.push(LayerState {
                z,
                u,
                y,
                v,
                mask,
                quant,
                cluster,
            });
        }

        let masks_for_training: Option<Vec<PruneMask>> = fixed_masks;
        let mut trace = ResidualReport::default();
        let mut converged = false;

        for iteration in 1..=cfg.max_iters {
            // Subproblem 1: train W under the current penalties.
            let mut epoch_loss = 0.0f64;
            for _ in 0..cfg.epochs_per_iter {
                let penalties: Vec<LayerPenalty<'_>> = states
                    .iter()
                    .enumerate()
                    .map(|(l, s)| LayerPenalty {
                        rho: cfg.layers[l].rho,
                        sparsity: s.z.as_ref().zip(s.u.as_ref()),
                        discreteness: s.y.as_ref().zip(s.v.as_ref()),
                    })
                    .collect();
                epoch_loss = solver.solve_subproblem(&penalties, masks_for_training.as_deref())?;
            }
            if !epoch_loss.is_finite() {
                return Err(Error::Divergence {
                    iteration,
                    message: format!("non-finite training loss {}", epoch_loss),
                });
            }

            // Subproblems 2-3 and dual updates, per layer.
            let mut layer_res = Vec::with_capacity(n_layers);
            for l in 0..n_layers {
                let w = solver.weights(l).clone();
                if !w.is_finite() {
                    return Err(Error::Divergence {
                        iteration,
                        message: format!("non-finite weights in layer {}", l),
                    });
                }
                let s = &mut states[l];
                let t = &cfg.layers[l];

                let (mut w_z, mut z_drift) = (None, None);
                if sparsity_active {
                    let z_prev = s.z.take().unwrap();
                    let u = s.u.as_mut().unwrap();
                    // Z = project(W + U) onto the alpha-sparse set.
                    let mut wu = w.clone();
                    wu.axpy(1.0, u);
                    let (z_new, mask) = project_sparsity(&wu, t.alpha)?;
                    // U <- U + W - Z.
                    u.axpy(1.0, &w);
                    u.axpy(-1.0, &z_new);
                    z_drift = Some(z_new.dist_sq(&z_prev));
                    w_z = Some(w.dist_sq(&z_new));
                    s.mask = mask;
                    s.z = Some(z_new);
                }

                let (mut w_y, mut y_drift) = (None, None);
                if s.y.is_some() {
                    let y_prev = s.y.take().unwrap();
                    let v = s.v.as_mut().unwrap();
                    let mut wv = w.clone();
                    wv.axpy(1.0, v);
                    // Joint mode discretizes on the freshest sparsity mask.
                    let y_new = match cfg.kind {
                        DiscreteKind::Quantize => {
                            project_quantize(&wv, s.quant.as_ref().unwrap(), &s.mask)
                        }
                        DiscreteKind::Cluster => {
                            let (y_new, spec) =
                                project_cluster(&wv, s.cluster.as_ref().unwrap(), &s.mask)?;
                            s.cluster = Some(spec);
                            y_new
                        }
                    };
                    // V <- V + W - Y.
                    v.axpy(1.0, &w);
                    v.axpy(-1.0, &y_new);
                    y_drift = Some(y_new.dist_sq(&y_prev));
                    w_y = Some(w.dist_sq(&y_new));
                    s.y = Some(y_new);
                }

                layer_res.push(LayerResiduals {
                    w_z,
                    z_drift,
                    w_y,
                    y_drift,
                });
            }

            trace.iterations.push(IterationResiduals {
                iteration,
                train_loss: epoch_loss,
                layers: layer_res,
            });

            observer(iteration, &states, solver);

            if check_convergence(&trace, &eps) {
                converged = true;
                break;
            }
        }

        Ok(AdmmOutcome {
            states,
            trace,
            converged,
            eps,
        })
    }
}

/// Network-backed subproblem solver: one seeded epoch of minibatch
/// training on the augmented loss per `solve_subproblem` call.
pub struct NetworkSolver<'a> {
    pub net: &'a mut Network,
    pub data: &'a Dataset,
    pub batch_size: usize,
    pub optimizer: OptimizerState,
    pub rng: ChaCha8Rng,
}

impl<'a> NetworkSolver<'a> {
    pub fn new(
        net: &'a mut Network,
        data: &'a Dataset,
        batch_size: usize,
        opt_config: OptimizerConfig,
        seed: u64,
    ) -> Self {
        let optimizer = OptimizerState::for_network(opt_config, net);
        Self {
            net,
            data,
            batch_size,
            optimizer,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl SubproblemSolver for NetworkSolver<'_> {
    fn layer_count(&self) -> usize {
        self.net.trainable_count()
    }

    fn weights(&self, layer: usize) -> &WeightTensor {
        &self.net.params()[layer].weights
    }

    fn set_weights(&mut self, layer: usize, w: WeightTensor) -> Result<()> {
        if w.shape() != self.net.params()[layer].weights.shape() {
            return Err(Error::Config("weight shape mismatch".into()));
        }
        self.net.params_mut()[layer].weights = w;
        Ok(())
    }

    fn solve_subproblem(
        &mut self,
        penalties: &[LayerPenalty<'_>],
        masks: Option<&[PruneMask]>,
    ) -> Result<f64> {
        let runner = EpochRunner::new(self.data, self.batch_size);
        runner.run_epoch(
            self.net,
            &mut self.optimizer,
            &mut self.rng,
            masks,
            |net, grads| {
                let weights: Vec<&WeightTensor> =
                    net.params().iter().map(|p| &p.weights).collect();
                add_penalty_grads(&weights, penalties, grads);
            },
        )
    }
}

// --- the three spec-level pipelines over networks ---

pub struct PruneOutcome {
    pub masks: Vec<PruneMask>,
    pub trace: ResidualReport,
    pub converged: bool,
    pub retrain: crate::finalize::RetrainReport,
}

/// Sequential ADMM weight pruning: runs the sparsity-only phase, hard
/// projects the weights onto the final masks, and recovers accuracy with
/// masked retraining. The result has at most alpha_i nonzeros per layer,
/// exactly.
pub fn admm_prune(
    net: &mut Network,
    train: &Dataset,
    eval: &Dataset,
    cfg: &CompressionConfig,
    retrain: &crate::finalize::RetrainConfig,
) -> Result<PruneOutcome> {
    let outcome = {
        let mut solver = NetworkSolver::new(net, train, cfg.batch_size, cfg.optimizer, cfg.seed);
        AdmmEngine::new(cfg).run(&mut solver, Phase::Prune, None)?
    };
    let masks = outcome.masks();
    for (t, mask) in masks.iter().enumerate() {
        mask.apply(&mut net.params_mut()[t].weights);
    }
    let retrain_report = crate::finalize::masked_retrain(net, &masks, train, eval, retrain)?;
    for (t, mask) in masks.iter().enumerate() {
        debug_assert!(mask.respected_by(&net.params()[t].weights));
        debug_assert!(net.params()[t].weights.count_nonzero() <= cfg.layers[t].alpha);
    }
    Ok(PruneOutcome {
        masks,
        trace: outcome.trace,
        converged: outcome.converged,
        retrain: retrain_report,
    })
}

pub struct DiscretizeOutcome {
    pub trace: ResidualReport,
    pub converged: bool,
    /// Fitted interval specs (quantize kind), per layer with discreteness.
    pub quant_specs: Vec<Option<QuantSpec>>,
    /// Live cluster specs (cluster kind).
    pub cluster_specs: Vec<Option<ClusterSpec>>,
}

/// ADMM discretization on a pruned net: drives the surviving weights
/// toward quantization levels or cluster centroids under fixed masks.
/// Exact discreteness is completed by the finalization procedures.
pub fn admm_discretize(
    net: &mut Network,
    masks: &[PruneMask],
    train: &Dataset,
    cfg: &CompressionConfig,
) -> Result<DiscretizeOutcome> {
    let outcome = {
        let mut solver = NetworkSolver::new(net, train, cfg.batch_size, cfg.optimizer, cfg.seed);
        AdmmEngine::new(cfg).run(&mut solver, Phase::Discretize, Some(masks.to_vec()))?
    };
    Ok(DiscretizeOutcome {
        quant_specs: outcome.states.iter().map(|s| s.quant).collect(),
        cluster_specs: outcome.states.iter().map(|s| s.cluster.clone()).collect(),
        trace: outcome.trace,
        converged: outcome.converged,
    })
}

pub struct JointOutcome {
    pub masks: Vec<PruneMask>,
    pub trace: ResidualReport,
    pub converged: bool,
    pub quant_specs: Vec<Option<QuantSpec>>,
    pub cluster_specs: Vec<Option<ClusterSpec>>,
}

/// Joint ADMM over both constraint families. On return the weights are
/// hard-projected onto the final masks; discreteness finalization is the
/// caller's next step.
pub fn admm_joint(
    net: &mut Network,
    train: &Dataset,
    cfg: &CompressionConfig,
) -> Result<JointOutcome> {
    let outcome = {
        let mut solver = NetworkSolver::new(net, train, cfg.batch_size, cfg.optimizer, cfg.seed);
        AdmmEngine::new(cfg).run(&mut solver, Phase::Joint, None)?
    };
    let masks = outcome.masks();
    for (t, mask) in masks.iter().enumerate() {
        mask.apply(&mut net.params_mut()[t].weights);
    }
    Ok(JointOutcome {
        masks,
        quant_specs: outcome.states.iter().map(|s| s.quant).collect(),
        cluster_specs: outcome.states.iter().map(|s| s.cluster.clone()).collect(),
        trace: outcome.trace,
        converged: outcome.converged,
    })
}
