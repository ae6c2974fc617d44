//! Acceptance suite: one test per criterion, each printing a PASS line
//! with its measured numbers (run with --nocapture to see them).
//!
//! Criteria 1-6 and 8 are quick; criterion 7 trains on full MNIST (IDX
//! files under data/mnist or $ADMMC_DATA_DIR) and takes the bulk of the
//! runtime. The optional LeNet-5 long run is #[ignore]d and not gating.

use std::path::PathBuf;
use std::time::Instant;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use admm_compress::admm::{
    self, toy::ToyLeastSquares, AdmmEngine, CompressionConfig, DiscreteKind, LayerTargets, Mode,
    NetworkSolver, Phase, SubproblemSolver,
};
use admm_compress::config::RunConfig;
use admm_compress::data::{load_mnist, synthetic_blobs};
use admm_compress::finalize::{self, RetrainConfig};
use admm_compress::model::{compute_ratios, Codebook, CompressedModel, LayerStats};
use admm_compress::nn::{LayerSpec, Network};
use admm_compress::optim::{EpochRunner, OptimizerConfig, OptimizerState};
use admm_compress::pipeline;
use admm_compress::projection::{
    fit_interval, project_quantize, project_sparsity, quantize_sse, QuantSpec,
};
use admm_compress::tensor::{PruneMask, WeightTensor};

fn workspace_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .canonicalize()
        .expect("workspace root resolves")
}

fn mnist_dir() -> PathBuf {
    std::env::var("ADMMC_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|_| workspace_root().join("data/mnist"))
}

/// CPU time consumed by the calling thread, in seconds. The MNIST MLP
/// pipeline runs entirely on the test thread, so this is the criterion's
/// "total CPU runtime" regardless of what other tests run concurrently.
/// Falls back to 0 (skipping the budget check) off Linux.
fn thread_cpu_seconds() -> Option<f64> {
    let stat = std::fs::read_to_string("/proc/thread-self/stat").ok()?;
    // utime and stime are fields 14 and 15 (1-indexed), after the comm
    // field which may contain spaces; split after the closing paren.
    let after = stat.rsplit(')').next()?;
    let fields: Vec<&str> = after.split_whitespace().collect();
    let utime: f64 = fields.get(11)?.parse().ok()?;
    let stime: f64 = fields.get(12)?.parse().ok()?;
    // USER_HZ is 100 on Linux.
    Some((utime + stime) / 100.0)
}

// ---------------------------------------------------------------- 1 ----

#[test]
fn acceptance_1_projection_oracles() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xacce1);

    // Sparsity projection vs brute force over all supports.
    for trial in 0..500 {
        let n = rng.random_range(1..=12usize);
        let alpha = rng.random_range(0..=n);
        let vals: Vec<f32> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let t = WeightTensor::from_vec(vals);
        let (p, mask) = project_sparsity(&t, alpha).unwrap();
        assert_eq!(mask.count_ones(), alpha);
        let oracle = brute_force_sparse_dist(&t, alpha);
        let ours = t.dist_sq(&p);
        assert!(
            (ours - oracle).abs() <= 1e-12,
            "trial {}: sparsity distance {} vs brute force {}",
            trial,
            ours,
            oracle
        );
    }

    // Quantization projection vs exhaustive nearest-level scan.
    for trial in 0..500 {
        let m = 2 * rng.random_range(1..=8usize);
        let q = rng.random_range(0.01..1.5f32);
        let spec = QuantSpec::new(m, q).unwrap();
        let n = rng.random_range(1..=12usize);
        let vals: Vec<f32> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let t = WeightTensor::from_vec(vals.clone());
        let mask = PruneMask::all_ones(vec![n]);
        let p = project_quantize(&t, &spec, &mask);
        let levels = spec.levels();
        for (i, (&got, &w)) in p.data().iter().zip(&vals).enumerate() {
            let best = levels
                .iter()
                .map(|&l| (w - l).abs())
                .fold(f32::INFINITY, f32::min);
            assert!(
                ((w - got).abs() - best).abs() <= 1e-6,
                "trial {} idx {}: {} -> {} is not nearest-level",
                trial,
                i,
                w,
                got
            );
        }
    }

    // Interval fitting vs the 1e-5 grid oracle.
    for trial in 0..100 {
        let n = rng.random_range(1..=12usize);
        let m = 2 * rng.random_range(1..=4usize);
        let vals: Vec<f32> = (0..n).map(|_| rng.random_range(-1.5..1.5f32)).collect();
        if vals.iter().all(|&v| v == 0.0) {
            continue;
        }
        let t = WeightTensor::from_vec(vals);
        let mask = PruneMask::all_ones(vec![n]);
        let q = fit_interval(&t, &mask, m).unwrap();
        let ours = quantize_sse(&t, &mask, m, q);
        let oracle = grid_oracle_sse(&t, &mask, m, 1e-5);
        assert!(
            ours <= oracle + 1e-9,
            "trial {}: fitted SSE {} vs oracle {}",
            trial,
            ours,
            oracle
        );
        assert!(
            ours <= oracle * (1.0 + 1e-6) + 1e-12,
            "trial {}: fitted SSE {} worse than oracle {} beyond 1e-6 relative",
            trial,
            ours,
            oracle
        );
    }

    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "criterion 1 took {:.1}s", elapsed);
    println!(
        "ACCEPTANCE 1 PASS: projection oracles (500 sparsity, 500 quantize, 100 fit) in {:.1}s",
        elapsed
    );
}

fn brute_force_sparse_dist(t: &WeightTensor, alpha: usize) -> f64 {
    fn rec(t: &WeightTensor, keep: &mut Vec<bool>, start: usize, left: usize, best: &mut f64) {
        if left == 0 {
            let d: f64 = t
                .data()
                .iter()
                .zip(keep.iter())
                .map(|(&v, &k)| if k { 0.0 } else { (v as f64) * (v as f64) })
                .sum();
            *best = best.min(d);
            return;
        }
        if start + left > keep.len() {
            return;
        }
        keep[start] = true;
        rec(t, keep, start + 1, left - 1, best);
        keep[start] = false;
        rec(t, keep, start + 1, left, best);
    }
    let mut best = f64::INFINITY;
    rec(t, &mut vec![false; t.numel()], 0, alpha, &mut best);
    best
}

fn grid_oracle_sse(t: &WeightTensor, mask: &PruneMask, m: usize, step: f64) -> f64 {
    let max_mag = t
        .data()
        .iter()
        .zip(mask.keep())
        .filter(|(_, &k)| k)
        .map(|(&v, _)| v.abs())
        .fold(0.0f32, f32::max) as f64;
    let mut best = f64::INFINITY;
    let mut q = step;
    while q <= max_mag + step {
        best = best.min(quantize_sse(t, mask, m, q as f32));
        q += step;
    }
    best
}

// ---------------------------------------------------------------- 2 ----

#[test]
fn acceptance_2_gradient_suite() {
    let start = Instant::now();

    // Every layer kind in one conv net plus a dense-only MLP.
    let nets = vec![
        Network::mlp(&[6, 8, 4], 3).unwrap(),
        Network::new(
            vec![1, 6, 6],
            vec![
                LayerSpec::Conv2d { in_ch: 1, out_ch: 2, kernel: 3, stride: 1 },
                LayerSpec::Relu,
                LayerSpec::MaxPool { size: 2, stride: 2 },
                LayerSpec::Flatten,
                LayerSpec::Dense { in_dim: 8, out_dim: 3 },
            ],
            7,
        )
        .unwrap(),
    ];
    for (ni, net) in nets.into_iter().enumerate() {
        let feat: usize = net.input_shape().iter().product();
        let batch = 3usize;
        let mut rng = ChaCha8Rng::seed_from_u64(ni as u64);
        let x: Vec<f32> = (0..batch * feat).map(|_| rng.random_range(-1.0..1.0)).collect();
        let labels: Vec<u8> = (0..batch)
            .map(|_| rng.random_range(0..net.class_count()) as u8)
            .collect();
        check_plain_grads(net, &x, batch, &labels);
    }

    // Augmented loss with both penalty families active.
    let net = Network::mlp(&[5, 7, 3], 11).unwrap();
    check_augmented_grads(net);

    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "criterion 2 took {:.1}s", elapsed);
    println!(
        "ACCEPTANCE 2 PASS: finite-difference gradient checks (all layer kinds + augmented loss) in {:.1}s",
        elapsed
    );
}

fn fd_check(analytic: f64, numeric: f64, what: &str) {
    let diff = (analytic - numeric).abs();
    let scale = analytic.abs().max(numeric.abs());
    assert!(
        diff <= 1e-6 || diff / scale <= 1e-2,
        "{}: analytic {} vs numeric {}",
        what,
        analytic,
        numeric
    );
}

/// Independent f64 reference of the forward pass + mean softmax
/// cross-entropy, used as the finite-difference oracle. Evaluating the
/// loss in f64 keeps fd noise far below the 1e-6 comparison floor, which
/// an f32 forward cannot guarantee for near-zero gradient components.
struct RefNet {
    input_shape: Vec<usize>,
    specs: Vec<LayerSpec>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

impl RefNet {
    fn from(net: &Network) -> Self {
        Self {
            input_shape: net.input_shape().to_vec(),
            specs: net.specs().to_vec(),
            weights: net
                .params()
                .iter()
                .map(|p| p.weights.data().iter().map(|&v| v as f64).collect())
                .collect(),
            biases: net
                .params()
                .iter()
                .map(|p| p.bias.data().iter().map(|&v| v as f64).collect())
                .collect(),
        }
    }

    fn loss(&self, input: &[f32], batch: usize, labels: &[u8]) -> f64 {
        let mut shape = self.input_shape.clone();
        let mut cur: Vec<f64> = input.iter().map(|&v| v as f64).collect();
        let mut t = 0usize;
        for spec in &self.specs {
            let next_shape = spec.out_shape(&shape).unwrap();
            cur = match *spec {
                LayerSpec::Dense { in_dim, out_dim } => {
                    let w = &self.weights[t];
                    let b = &self.biases[t];
                    let mut out = vec![0.0f64; batch * out_dim];
                    for bi in 0..batch {
                        for o in 0..out_dim {
                            let mut acc = b[o];
                            for i in 0..in_dim {
                                acc += cur[bi * in_dim + i] * w[i * out_dim + o];
                            }
                            out[bi * out_dim + o] = acc;
                        }
                    }
                    t += 1;
                    out
                }
                LayerSpec::Conv2d { in_ch, out_ch, kernel, stride } => {
                    let (h, w) = (shape[1], shape[2]);
                    let (oh, ow) = (next_shape[1], next_shape[2]);
                    let fw = &self.weights[t];
                    let fb = &self.biases[t];
                    let mut out = vec![0.0f64; batch * out_ch * oh * ow];
                    for bi in 0..batch {
                        for oc in 0..out_ch {
                            for oy in 0..oh {
                                for ox in 0..ow {
                                    let mut acc = fb[oc];
                                    for ic in 0..in_ch {
                                        for ky in 0..kernel {
                                            for kx in 0..kernel {
                                                let xi = ((bi * in_ch + ic) * h
                                                    + oy * stride
                                                    + ky)
                                                    * w
                                                    + ox * stride
                                                    + kx;
                                                let fi = ((oc * in_ch + ic) * kernel + ky)
                                                    * kernel
                                                    + kx;
                                                acc += cur[xi] * fw[fi];
                                            }
                                        }
                                    }
                                    out[((bi * out_ch + oc) * oh + oy) * ow + ox] = acc;
                                }
                            }
                        }
                    }
                    t += 1;
                    out
                }
                LayerSpec::MaxPool { size, stride } => {
                    let (c, h, w) = (shape[0], shape[1], shape[2]);
                    let (oh, ow) = (next_shape[1], next_shape[2]);
                    let mut out = vec![0.0f64; batch * c * oh * ow];
                    for bc in 0..batch * c {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let mut best = f64::NEG_INFINITY;
                                for ky in 0..size {
                                    for kx in 0..size {
                                        let v = cur
                                            [bc * h * w + (oy * stride + ky) * w + ox * stride + kx];
                                        if v > best {
                                            best = v;
                                        }
                                    }
                                }
                                out[(bc * oh + oy) * ow + ox] = best;
                            }
                        }
                    }
                    out
                }
                LayerSpec::Relu => cur.iter().map(|&v| v.max(0.0)).collect(),
                LayerSpec::Flatten => cur,
            };
            shape = next_shape;
        }
        let classes = shape[0];
        let mut total = 0.0f64;
        for (bi, &label) in labels.iter().enumerate() {
            let row = &cur[bi * classes..(bi + 1) * classes];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|&v| (v - max).exp()).sum();
            total += sum.ln() + max - row[label as usize];
        }
        total / batch as f64
    }
}

fn check_plain_grads(net: Network, x: &[f32], batch: usize, labels: &[u8]) {
    let (_, grads) = net.loss_and_grads(x, batch, labels).unwrap();
    let mut reference = RefNet::from(&net);
    let eps = 1e-3f64;
    for t in 0..net.trainable_count() {
        for idx in 0..reference.weights[t].len() {
            let orig = reference.weights[t][idx];
            reference.weights[t][idx] = orig + eps;
            let lp = reference.loss(x, batch, labels);
            reference.weights[t][idx] = orig - eps;
            let lm = reference.loss(x, batch, labels);
            reference.weights[t][idx] = orig;
            fd_check(
                grads[t].d_weights.data()[idx] as f64,
                (lp - lm) / (2.0 * eps),
                &format!("layer {} w[{}]", t, idx),
            );
        }
        for idx in 0..reference.biases[t].len() {
            let orig = reference.biases[t][idx];
            reference.biases[t][idx] = orig + eps;
            let lp = reference.loss(x, batch, labels);
            reference.biases[t][idx] = orig - eps;
            let lm = reference.loss(x, batch, labels);
            reference.biases[t][idx] = orig;
            fd_check(
                grads[t].d_bias.data()[idx] as f64,
                (lp - lm) / (2.0 * eps),
                &format!("layer {} b[{}]", t, idx),
            );
        }
    }
}

fn check_augmented_grads(net: Network) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x: Vec<f32> = (0..4 * 5).map(|_| rng.random_range(-1.0..1.0)).collect();
    let labels = [0u8, 2, 1, 1];
    let states: Vec<(WeightTensor, WeightTensor, WeightTensor, WeightTensor)> = net
        .params()
        .iter()
        .map(|p| {
            let rand_like = |rng: &mut ChaCha8Rng| {
                WeightTensor::new(
                    p.weights.shape().to_vec(),
                    (0..p.weights.numel()).map(|_| rng.random_range(-0.5..0.5)).collect(),
                )
                .unwrap()
            };
            (
                rand_like(&mut rng),
                rand_like(&mut rng),
                rand_like(&mut rng),
                rand_like(&mut rng),
            )
        })
        .collect();
    let penalties: Vec<admm::LayerPenalty<'_>> = states
        .iter()
        .map(|(z, u, y, v)| admm::LayerPenalty {
            rho: 0.3,
            sparsity: Some((z, u)),
            discreteness: Some((y, v)),
        })
        .collect();
    let (_, grads) = admm::augmented_grads(&net, &x, 4, &labels, &penalties).unwrap();

    // Reference: f64 data loss plus the exact f64 penalty terms.
    let mut reference = RefNet::from(&net);
    let augmented_ref = |reference: &RefNet| -> f64 {
        let mut loss = reference.loss(&x, 4, &labels);
        for (t, (z, u, y, v)) in states.iter().enumerate() {
            for (target, dual) in [(z, u), (y, v)] {
                let term: f64 = reference.weights[t]
                    .iter()
                    .zip(target.data().iter().zip(dual.data()))
                    .map(|(&w, (&zt, &du))| {
                        let r = w - zt as f64 + du as f64;
                        r * r
                    })
                    .sum();
                loss += 0.5 * 0.3 * term;
            }
        }
        loss
    };
    let eps = 1e-3f64;
    for t in 0..net.trainable_count() {
        for idx in 0..reference.weights[t].len() {
            let orig = reference.weights[t][idx];
            reference.weights[t][idx] = orig + eps;
            let lp = augmented_ref(&reference);
            reference.weights[t][idx] = orig - eps;
            let lm = augmented_ref(&reference);
            reference.weights[t][idx] = orig;
            fd_check(
                grads[t].d_weights.data()[idx] as f64,
                (lp - lm) / (2.0 * eps),
                &format!("augmented layer {} w[{}]", t, idx),
            );
        }
    }
}

// ---------------------------------------------------------------- 3 ----

#[test]
fn acceptance_3_convex_toy_oracle() {
    let start = Instant::now();

    let mk_cfg = |bits: Option<u32>, rho: f32, iters: usize| CompressionConfig {
        mode: Mode::Sequential,
        kind: DiscreteKind::Quantize,
        layers: vec![LayerTargets { alpha: 3, bits, rho, eps: Some(1e-12) }],
        max_iters: iters,
        epochs_per_iter: 1,
        freeze_fraction: 1.0,
        finalize_retrain_epochs: 0,
        optimizer: OptimizerConfig::sgd(0.0),
        batch_size: 1,
        seed: 0,
    };

    for seed in [11u64, 23, 47, 81, 102] {
        // Sequential pruning within 5% of exhaustive best subset.
        let mut toy = ToyLeastSquares::random(20, 8, 3, 0.1, seed);
        let (_, oracle) = toy.best_subset(3);
        let outcome = AdmmEngine::new(&mk_cfg(None, 0.5, 200))
            .run(&mut toy, Phase::Prune, None)
            .unwrap();
        let (_, achieved) = toy.solve_on_support(outcome.states[0].mask.keep());
        assert!(
            achieved <= oracle * 1.05 + 1e-12,
            "seed {}: sequential {} vs oracle {}",
            seed,
            achieved,
            oracle
        );

        // Joint with M = 2 within 10% of the support x sign enumeration.
        let mut toy = ToyLeastSquares::random(20, 8, 3, 0.1, seed);
        let oracle_q = toy.best_subset_quantized(3, 2);
        let outcome = AdmmEngine::new(&mk_cfg(Some(1), 2.0, 300))
            .run(&mut toy, Phase::Joint, None)
            .unwrap();
        let mask = outcome.states[0].mask.clone();
        let spec = outcome.states[0].quant.unwrap();
        let mut x = toy.x().clone();
        mask.apply(&mut x);
        let x = project_quantize(&x, &spec, &mask);
        let achieved_q = toy.objective(x.data());
        assert!(
            achieved_q <= oracle_q * 1.10 + 1e-12,
            "seed {}: joint {} vs oracle {}",
            seed,
            achieved_q,
            oracle_q
        );
    }

    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "criterion 3 took {:.1}s", elapsed);
    println!(
        "ACCEPTANCE 3 PASS: convex toy within 5% (sequential) / 10% (joint) of enumeration on 5 instances in {:.1}s",
        elapsed
    );
}

// ---------------------------------------------------------------- 4 ----

#[test]
fn acceptance_4_algebraic_identities() {
    let start = Instant::now();

    let net0 = Network::mlp(&[4, 6, 3], 21).unwrap();
    let data = synthetic_blobs(80, 3, 4, 5).unwrap();
    let targets: Vec<LayerTargets> = net0
        .params()
        .iter()
        .map(|p| LayerTargets {
            alpha: p.weights.numel() / 2,
            bits: Some(2),
            rho: 1e-2,
            eps: Some(1e-12),
        })
        .collect();
    let cfg = CompressionConfig {
        mode: Mode::Joint,
        kind: DiscreteKind::Quantize,
        layers: targets,
        max_iters: 5,
        epochs_per_iter: 1,
        freeze_fraction: 0.2,
        finalize_retrain_epochs: 1,
        optimizer: OptimizerConfig::adam(1e-3),
        batch_size: 16,
        seed: 3,
    };

    // Dual identities and feasibility, every iteration, joint mode.
    let mut net = net0.clone();
    let mut prev_u: Option<Vec<WeightTensor>> = None;
    let mut prev_v: Option<Vec<WeightTensor>> = None;
    let mut iterations = 0usize;
    {
        let mut solver = NetworkSolver::new(&mut net, &data, cfg.batch_size, cfg.optimizer, 3);
        AdmmEngine::new(&cfg)
            .run_observed(&mut solver, Phase::Joint, None, |_, states, s| {
                iterations += 1;
                for (l, st) in states.iter().enumerate() {
                    let z = st.z.as_ref().unwrap();
                    let u = st.u.as_ref().unwrap();
                    let mut expected = prev_u
                        .as_ref()
                        .map(|p| p[l].clone())
                        .unwrap_or_else(|| WeightTensor::zeros(u.shape().to_vec()));
                    expected.axpy(1.0, s.weights(l));
                    expected.axpy(-1.0, z);
                    assert_eq!(expected.data(), u.data(), "U identity, layer {}", l);

                    let y = st.y.as_ref().unwrap();
                    let v = st.v.as_ref().unwrap();
                    let mut expected = prev_v
                        .as_ref()
                        .map(|p| p[l].clone())
                        .unwrap_or_else(|| WeightTensor::zeros(v.shape().to_vec()));
                    expected.axpy(1.0, s.weights(l));
                    expected.axpy(-1.0, y);
                    assert_eq!(expected.data(), v.data(), "V identity, layer {}", l);

                    // Z feasible: alpha-sparse. Y feasible: on levels or 0.
                    assert!(z.count_nonzero() <= cfg.layers[l].alpha);
                    let levels = st.quant.as_ref().unwrap().levels();
                    for (&yv, &k) in y.data().iter().zip(st.mask.keep()) {
                        if k {
                            assert!(levels.contains(&yv), "Y off-level: {}", yv);
                        } else {
                            assert_eq!(yv, 0.0);
                        }
                    }
                }
                prev_u = Some(states.iter().map(|st| st.u.clone().unwrap()).collect());
                prev_v = Some(states.iter().map(|st| st.v.clone().unwrap()).collect());
            })
            .unwrap();
    }
    assert_eq!(iterations, cfg.max_iters);

    // rho = 0 reduction: engine epoch bit-identical to a plain epoch.
    let mut cfg0 = cfg.clone();
    for t in &mut cfg0.layers {
        t.rho = 0.0;
        t.bits = None;
        t.alpha = usize::MAX; // replaced below per layer
    }
    for (t, p) in cfg0.layers.iter_mut().zip(net0.params()) {
        t.alpha = p.weights.numel();
        t.eps = None;
    }
    cfg0.max_iters = 1;
    let mut net_engine = net0.clone();
    {
        let mut solver =
            NetworkSolver::new(&mut net_engine, &data, cfg0.batch_size, cfg0.optimizer, 77);
        AdmmEngine::new(&cfg0).run(&mut solver, Phase::Prune, None).unwrap();
    }
    let mut net_plain = net0.clone();
    let mut opt = OptimizerState::for_network(cfg0.optimizer, &net_plain);
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    EpochRunner::new(&data, cfg0.batch_size)
        .run_epoch(&mut net_plain, &mut opt, &mut rng, None, |_, _| {})
        .unwrap();
    for (a, b) in net_engine.params().iter().zip(net_plain.params()) {
        assert_eq!(a.weights.data(), b.weights.data(), "rho=0 reduction broke");
        assert_eq!(a.bias.data(), b.bias.data());
    }

    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "criterion 4 took {:.1}s", elapsed);
    println!(
        "ACCEPTANCE 4 PASS: dual identities + feasibility every iteration, rho=0 reduction bit-exact, in {:.1}s",
        elapsed
    );
}

// ---------------------------------------------------------------- 5 ----

#[test]
fn acceptance_5_exactness_and_round_trip() {
    let start = Instant::now();

    // Full small pipeline: prune -> quantize ADMM -> iterative freeze.
    let data = synthetic_blobs(200, 3, 8, 9).unwrap();
    let mut net = Network::mlp(&[8, 12, 3], 5).unwrap();
    let cfg_text = r#"{
        "recipe": "acceptance5", "seed": 4,
        "data": {"kind": "synthetic", "n": 200, "classes": 3, "dim": 8},
        "model": {"kind": "mlp", "dims": [8, 12, 3]},
        "train": {"optimizer": {"kind": "adam", "lr": 0.003}, "batch_size": 25, "epochs": 4},
        "admm": {
            "mode": "sequential", "kind": "quantize",
            "max_iters": 4, "epochs_per_iter": 1,
            "optimizer": {"kind": "adam", "lr": 0.001}, "batch_size": 25,
            "layers": [
                {"alpha_frac": 0.4, "bits": 3, "rho": 0.01},
                {"alpha_frac": 0.5, "bits": 3, "rho": 0.01}
            ]
        },
        "finalize": {
            "freeze_fraction": 0.3, "retrain_epochs": 2,
            "freeze_retrain_epochs": 1, "cluster_retrain_epochs": 1,
            "patience": 2,
            "optimizer": {"kind": "adam", "lr": 0.001}, "batch_size": 25
        }
    }"#;
    let cfg = RunConfig::parse(cfg_text).unwrap();
    pipeline::train_baseline(&mut net, &data, &data, &cfg.train, cfg.seed).unwrap();
    let prune = pipeline::run_prune(&cfg, &mut net, &data, &data).unwrap();
    let quant = pipeline::run_quantize(&cfg, &mut net, &prune.outcome.masks, &data, &data).unwrap();

    // Every surviving weight bit-exactly in its codebook.
    for (t, cb) in quant.codebooks.iter().enumerate() {
        let entries: Vec<u32> = cb.entries.iter().map(|e| e.to_bits()).collect();
        for (&w, &k) in net.params()[t]
            .weights
            .data()
            .iter()
            .zip(prune.outcome.masks[t].keep())
        {
            if k {
                assert!(
                    entries.contains(&w.to_bits()),
                    "layer {}: weight {} not bit-exact in codebook",
                    t,
                    w
                );
            } else {
                assert_eq!(w, 0.0);
            }
        }
    }
    let model =
        CompressedModel::from_network(&net, &prune.outcome.masks, &quant.codebooks).unwrap();
    let decoded = CompressedModel::decode(&model.encode()).unwrap();
    assert_eq!(model, decoded);
    assert_eq!(decoded.to_network().unwrap(), net);

    // Randomized encode/decode round trips across bit widths 1..=8.
    let mut rng = ChaCha8Rng::seed_from_u64(123);
    for bits in 1..=8u32 {
        let mut net = Network::mlp(&[7, 6, 4], 100 + bits as u64).unwrap();
        let mut masks = Vec::new();
        let mut codebooks = Vec::new();
        for t in 0..net.trainable_count() {
            let w = net.params()[t].weights.clone();
            let alpha = rng.random_range(1..=w.numel());
            let (projected, mask) = project_sparsity(&w, alpha).unwrap();
            let m = 1usize << bits;
            let spec = match fit_interval(&projected, &mask, m) {
                Ok(q) => QuantSpec::new(m, q).unwrap(),
                Err(_) => QuantSpec::new(m, 0.1).unwrap(),
            };
            net.params_mut()[t].weights = project_quantize(&projected, &spec, &mask);
            codebooks.push(Codebook::quant(t, &spec, bits).unwrap());
            masks.push(mask);
        }
        let model = CompressedModel::from_network(&net, &masks, &codebooks).unwrap();
        let bytes = model.encode();
        let decoded = CompressedModel::decode(&bytes).unwrap();
        assert_eq!(model, decoded, "round trip at {} bits", bits);
        assert_eq!(decoded.to_network().unwrap(), net);
    }

    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "criterion 5 took {:.1}s", elapsed);
    println!(
        "ACCEPTANCE 5 PASS: pipeline exactness + encode/decode round trips (bits 1-8) in {:.1}s",
        elapsed
    );
}

// ---------------------------------------------------------------- 6 ----

#[test]
fn acceptance_6_paper_arithmetic_fixture() {
    let fixture = workspace_root().join("fixtures/lenet5_table3_stats.json");
    let stats: Vec<LayerStats> =
        serde_json::from_str(&std::fs::read_to_string(fixture).unwrap()).unwrap();
    let report = compute_ratios(&stats, true).unwrap();

    // Baseline: 430.5K weights x 32 bits = 1.722 MB, displayed as 1.7 MB.
    assert_eq!(report.baseline_bytes, 1_722_000.0);

    // Data size 0.89 KB and ratio 1,910x within +/- 10% (the table's exact
    // byte accounting is under-specified).
    let data_kb = report.data_size_bytes / 1024.0;
    assert!(
        (data_kb - 0.89).abs() <= 0.089,
        "data size {:.4} KB outside 0.89 +/- 10%",
        data_kb
    );
    assert!(
        (report.data_ratio - 1910.0).abs() <= 191.0,
        "ratio {:.1} outside 1910 +/- 10%",
        report.data_ratio
    );
    println!(
        "ACCEPTANCE 6 PASS: baseline 1.722MB exact; data {:.3} KB, ratio {:.0}x (targets 0.89KB / 1910x +/- 10%)",
        data_kb, report.data_ratio
    );
}

// ---------------------------------------------------------------- 7 ----

#[test]
fn acceptance_7_mnist_end_to_end() {
    let start = Instant::now();
    let cpu_start = thread_cpu_seconds();
    let dir = mnist_dir();
    let (train, test) = load_mnist(&dir).unwrap_or_else(|e| {
        panic!(
            "criterion 7 needs MNIST IDX files in {} (set ADMMC_DATA_DIR): {}",
            dir.display(),
            e
        )
    });

    let recipes = workspace_root().join("recipes");
    let load = |name: &str| RunConfig::load(&recipes.join(name)).unwrap();
    let base_cfg = load("mlp-mnist-baseline.json");
    let prune_cfg = load("mlp-mnist-prune10x.json");
    let quant_cfg = load("mlp-mnist-quant4b.json");
    let cluster_cfg = load("mlp-mnist-cluster4b.json");

    struct SeedResult {
        baseline: f64,
        pruned: f64,
        quantized: f64,
        clustered: f64,
    }

    let seeds = [1u64, 2, 3];
    let results: Vec<SeedResult> = seeds
        .iter()
        .map(|&seed| {
            let mut cfg = base_cfg.clone();
            cfg.seed = seed;
            let mut net = pipeline::build_network(&cfg.model, seed).unwrap();
            let baseline =
                pipeline::train_baseline(&mut net, &train, &test, &cfg.train, seed).unwrap();

            let mut pcfg = prune_cfg.clone();
            pcfg.seed = seed;
            let prune = pipeline::run_prune(&pcfg, &mut net, &train, &test).unwrap();
            let pruned = prune.accuracy_after;

            // Quantization arm.
            let mut qnet = net.clone();
            let mut qcfg = quant_cfg.clone();
            qcfg.seed = seed;
            let quant =
                pipeline::run_quantize(&qcfg, &mut qnet, &prune.outcome.masks, &train, &test)
                    .unwrap();

            // Clustering arm from the same pruned checkpoint.
            let mut ccfg = cluster_cfg.clone();
            ccfg.seed = seed;
            let cluster =
                pipeline::run_cluster(&ccfg, &mut net, &prune.outcome.masks, &train, &test)
                    .unwrap();

            println!(
                "  seed {}: baseline {:.4} pruned {:.4} quant {:.4} cluster {:.4}",
                seed, baseline, pruned, quant.accuracy_after, cluster.accuracy_after
            );
            SeedResult {
                baseline,
                pruned,
                quantized: quant.accuracy_after,
                clustered: cluster.accuracy_after,
            }
        })
        .collect();

    let median = |mut v: Vec<f64>| -> f64 {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v[v.len() / 2]
    };
    let baseline = median(results.iter().map(|r| r.baseline).collect());
    let pruned = median(results.iter().map(|r| r.pruned).collect());
    let quantized = median(results.iter().map(|r| r.quantized).collect());
    let clustered = median(results.iter().map(|r| r.clustered).collect());

    let elapsed = start.elapsed().as_secs_f64();
    let cpu = match (cpu_start, thread_cpu_seconds()) {
        (Some(a), Some(b)) => b - a,
        _ => elapsed,
    };
    assert!(
        baseline >= 0.975,
        "median baseline accuracy {:.4} below 97.5%",
        baseline
    );
    assert!(
        baseline - pruned <= 0.010,
        "pruning drop {:.4} exceeds 1%",
        baseline - pruned
    );
    assert!(
        pruned - quantized <= 0.005,
        "quantization drop {:.4} exceeds 0.5%",
        pruned - quantized
    );
    assert!(
        clustered >= quantized - 0.002,
        "clustering {:.4} more than 0.2% below quantization {:.4}",
        clustered,
        quantized
    );
    assert!(cpu <= 1800.0, "criterion 7 used {:.0}s CPU > 30 min", cpu);
    println!(
        "ACCEPTANCE 7 PASS: 3-seed medians baseline {:.4}, 10x-pruned {:.4}, 4-bit quant {:.4}, 4-bit cluster {:.4}; {:.0}s CPU ({:.0}s wall)",
        baseline, pruned, quantized, clustered, cpu, elapsed
    );
}

// ---------------------------------------------------------------- 8 ----

#[test]
fn acceptance_8_iterative_vs_single_shot() {
    let start = Instant::now();
    let dir = mnist_dir();
    let (train, test) = load_mnist(&dir).unwrap_or_else(|e| {
        panic!(
            "criterion 8 needs MNIST IDX files in {} (set ADMMC_DATA_DIR): {}",
            dir.display(),
            e
        )
    });

    let recipes = workspace_root().join("recipes");
    let base_cfg = RunConfig::load(&recipes.join("mlp-mnist-baseline.json")).unwrap();
    let prune_cfg = RunConfig::load(&recipes.join("mlp-mnist-prune10x.json")).unwrap();
    let mut quant_cfg = RunConfig::load(&recipes.join("mlp-mnist-quant4b.json")).unwrap();
    // The single-shot degradation the ablation probes is a 3-bit effect;
    // at 4 bits the ADMM phase already lands within noise of the levels
    // and both arms tie. Run the ablation at 3 bits on the same pruned
    // model.
    for layer in &mut quant_cfg.admm.layers {
        layer.bits = Some(3);
    }

    let seed = 1u64;
    let mut net = pipeline::build_network(&base_cfg.model, seed).unwrap();
    pipeline::train_baseline(&mut net, &train, &test, &base_cfg.train, seed).unwrap();
    let prune = pipeline::run_prune(&prune_cfg, &mut net, &train, &test).unwrap();
    let masks = prune.outcome.masks.clone();

    // Shared ADMM quantization phase, then two finalization arms.
    let ccfg = quant_cfg.compression_config(&net).unwrap();
    let discretize = admm::admm_discretize(&mut net, &masks, &train, &ccfg).unwrap();
    let specs: Vec<QuantSpec> = discretize.quant_specs.iter().map(|s| s.unwrap()).collect();

    let retrain = RetrainConfig {
        optimizer: quant_cfg.finalize.optimizer,
        batch_size: quant_cfg.finalize.batch_size,
        max_epochs: quant_cfg.finalize.freeze_retrain_epochs,
        patience: quant_cfg.finalize.patience,
        seed,
    };

    let mut iter_net = net.clone();
    finalize::iterative_quantize(&mut iter_net, &masks, &specs, &train, &test, 0.2, &retrain)
        .unwrap();
    let iterative = pipeline::evaluate(&iter_net, &test).unwrap();

    let mut shot_net = net.clone();
    finalize::iterative_quantize(&mut shot_net, &masks, &specs, &train, &test, 1.0, &retrain)
        .unwrap();
    let single_shot = pipeline::evaluate(&shot_net, &test).unwrap();

    let elapsed = start.elapsed().as_secs_f64();
    assert!(
        iterative >= single_shot,
        "iterative freeze {:.4} below single-shot {:.4}",
        iterative,
        single_shot
    );
    println!(
        "ACCEPTANCE 8 PASS: iterative freeze {:.4} >= single-shot {:.4} (gap {:+.4}) in {:.0}s",
        iterative,
        single_shot,
        iterative - single_shot,
        elapsed
    );
}

// ---------------------------------------------------------------- 9 ----

/// Optional long run (hours of CPU): LeNet-5 toward the published 167x
/// pruning figure; documented as a reproducibility experiment, not gating.
/// Run with: cargo test -p admm-compress --test acceptance -- --ignored
#[test]
#[ignore = "multi-hour CPU run; reproducibility experiment only"]
fn acceptance_9_lenet5_long_run() {
    let dir = mnist_dir();
    let (train, test) = load_mnist(&dir).unwrap();
    let cfg = RunConfig::load(&workspace_root().join("recipes/lenet5-full.json")).unwrap();
    let mut net = pipeline::build_network(&cfg.model, cfg.seed).unwrap();
    let baseline = pipeline::train_baseline(&mut net, &train, &test, &cfg.train, cfg.seed).unwrap();
    let prune = pipeline::run_prune(&cfg, &mut net, &train, &test).unwrap();
    let total: usize = net.params().iter().map(|p| p.weights.numel()).sum();
    let kept: usize = net.params().iter().map(|p| p.weights.count_nonzero()).sum();
    let reduction = total as f64 / kept as f64;
    println!(
        "ACCEPTANCE 9 (optional): baseline {:.4}, pruned {:.4}, weight reduction {:.0}x",
        baseline, prune.accuracy_after, reduction
    );
    assert!(reduction >= 50.0);
    assert!(prune.accuracy_after >= baseline - 0.01);
}
