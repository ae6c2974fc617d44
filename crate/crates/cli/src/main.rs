//! Batch front end: train a baseline, prune, quantize or cluster it,
//! evaluate, and pack/unpack the compressed form. Every subcommand writes
//! a JSON summary (and CSV traces where applicable) under --out.

use std::path::PathBuf;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};

use admm_compress::admm::Mode;
use admm_compress::checkpoint;
use admm_compress::config::{ModelConfig, RunConfig, RunSummary, Timing};
use admm_compress::error::{Error, Result};
use admm_compress::model::{compute_ratios, Codebook, CompressedModel, LayerStats};
use admm_compress::nn::Network;
use admm_compress::pipeline;

#[derive(Parser)]
#[command(name = "admmc", about = "ADMM weight pruning and clustering/quantization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Parser)]
struct CommonArgs {
    /// Run configuration JSON (see recipes/).
    #[arg(long)]
    config: PathBuf,
    /// Directory holding the MNIST IDX files.
    #[arg(long, default_value = "data/mnist")]
    data_dir: PathBuf,
    /// Output directory for checkpoints, traces, and summaries.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Input checkpoint; defaults to the stage convention under --out.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the baseline model.
    Train(CommonArgs),
    /// Sequential ADMM pruning plus masked retraining.
    Prune(CommonArgs),
    /// ADMM quantization plus iterative freeze-and-retrain.
    Quantize(CommonArgs),
    /// ADMM clustering plus centroid-only retraining.
    Cluster(CommonArgs),
    /// Joint pruning and discretization in one ADMM run.
    Joint(CommonArgs),
    /// Evaluate a checkpoint on the test split.
    Eval(CommonArgs),
    /// Compression-ratio report from a stats JSON or an .admmc file.
    Report {
        /// Per-layer stats JSON (numel/survivors/bits per layer).
        #[arg(long)]
        stats: Option<PathBuf>,
        /// Compressed model to report on.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Drop codebook bytes from the data size.
        #[arg(long)]
        exclude_codebook: bool,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Pack a finalized checkpoint into an .admmc stream.
    Pack {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Codebooks JSON written by quantize/cluster/joint.
        #[arg(long)]
        codebooks: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Unpack an .admmc stream back into a checkpoint.
    Unpack {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn main() {
    if let Ok(threads) = std::env::var("ADMMC_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {}", e);
            std::process::exit(e.exit_code());
        }
    }
}

fn load_config(args: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn write_summary(out: &PathBuf, name: &str, summary: &RunSummary) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let path = out.join(name);
    std::fs::write(&path, summary.to_json())?;
    println!("{}", path.display());
    Ok(())
}

fn timing(start: Instant) -> Timing {
    Timing {
        started_at_unix: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        elapsed_seconds: start.elapsed().as_secs_f64(),
    }
}

fn load_net(args: &CommonArgs, default_name: &str) -> Result<Network> {
    let path = args
        .checkpoint
        .clone()
        .unwrap_or_else(|| args.out.join(default_name));
    if !path.exists() {
        return Err(Error::Input(format!(
            "missing checkpoint {} (run the upstream stage first)",
            path.display()
        )));
    }
    checkpoint::load(&path)
}

fn nonzeros(net: &Network) -> Vec<usize> {
    net.params().iter().map(|p| p.weights.count_nonzero()).collect()
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Train(args) => {
            let start = Instant::now();
            let cfg = load_config(&args)?;
            let mut summary = RunSummary::new(&cfg.recipe, "train", cfg.seed);
            if matches!(cfg.model, ModelConfig::LeastSquares { .. }) {
                return Err(Error::Config(
                    "least-squares recipes run through `prune` or `joint`".into(),
                ));
            }
            let (train, test) = pipeline::load_data(&cfg.data, &args.data_dir, cfg.seed)?;
            let mut net = pipeline::build_network(&cfg.model, cfg.seed)?;
            let accuracy = pipeline::train_baseline(&mut net, &train, &test, &cfg.train, cfg.seed)?;
            std::fs::create_dir_all(&args.out)?;
            checkpoint::save(&net, &args.out.join("baseline.admmnet"))?;
            summary.baseline_accuracy = Some(accuracy);
            summary.timing = Some(timing(start));
            write_summary(&args.out, "train_summary.json", &summary)
        }
        Command::Prune(args) => {
            let start = Instant::now();
            let cfg = load_config(&args)?;
            let mut summary = RunSummary::new(&cfg.recipe, "prune", cfg.seed);
            if matches!(cfg.model, ModelConfig::LeastSquares { .. }) {
                let toy = pipeline::run_toy(&cfg)?;
                summary.achieved_objective = Some(toy.achieved_objective);
                summary.oracle_objective = Some(toy.oracle_objective);
                summary.converged = Some(toy.converged);
                std::fs::create_dir_all(&args.out)?;
                std::fs::write(args.out.join("prune_residuals.csv"), toy.trace.to_csv())?;
                summary.timing = Some(timing(start));
                return write_summary(&args.out, "prune_summary.json", &summary);
            }
            let (train, test) = pipeline::load_data(&cfg.data, &args.data_dir, cfg.seed)?;
            let mut net = load_net(&args, "baseline.admmnet")?;
            let run = pipeline::run_prune(&cfg, &mut net, &train, &test)?;
            std::fs::create_dir_all(&args.out)?;
            checkpoint::save(&net, &args.out.join("pruned.admmnet"))?;
            std::fs::write(
                args.out.join("prune_residuals.csv"),
                run.outcome.trace.to_csv(),
            )?;
            summary.accuracy_before = Some(run.accuracy_before);
            summary.accuracy_after = Some(run.accuracy_after);
            summary.per_layer_nonzeros = Some(nonzeros(&net));
            summary.per_layer_alpha =
                Some(cfg.layer_targets(&net)?.iter().map(|t| t.alpha).collect());
            summary.converged = Some(run.outcome.converged);
            summary.final_residuals = run
                .outcome
                .trace
                .iterations
                .last()
                .map(|it| it.layers.clone());
            summary.timing = Some(timing(start));
            write_summary(&args.out, "prune_summary.json", &summary)
        }
        Command::Quantize(args) => {
            let start = Instant::now();
            let cfg = load_config(&args)?;
            let mut summary = RunSummary::new(&cfg.recipe, "quantize", cfg.seed);
            let (train, test) = pipeline::load_data(&cfg.data, &args.data_dir, cfg.seed)?;
            let mut net = load_net(&args, "pruned.admmnet")?;
            let masks = pipeline::masks_from_zeros(&net);
            let run = pipeline::run_quantize(&cfg, &mut net, &masks, &train, &test)?;
            std::fs::create_dir_all(&args.out)?;
            checkpoint::save(&net, &args.out.join("quantized.admmnet"))?;
            std::fs::write(
                args.out.join("quantize_residuals.csv"),
                run.discretize.trace.to_csv(),
            )?;
            std::fs::write(args.out.join("quantize_freeze.csv"), run.freeze_trace.to_csv())?;
            std::fs::write(
                args.out.join("quantize_codebooks.json"),
                serde_json::to_string_pretty(&run.codebooks).expect("codebooks serialize"),
            )?;
            summary.accuracy_before = Some(run.accuracy_before);
            summary.accuracy_after = Some(run.accuracy_after);
            summary.per_layer_nonzeros = Some(nonzeros(&net));
            summary.converged = Some(run.discretize.converged);
            summary.timing = Some(timing(start));
            write_summary(&args.out, "quantize_summary.json", &summary)
        }
        Command::Cluster(args) => {
            let start = Instant::now();
            let cfg = load_config(&args)?;
            let mut summary = RunSummary::new(&cfg.recipe, "cluster", cfg.seed);
            let (train, test) = pipeline::load_data(&cfg.data, &args.data_dir, cfg.seed)?;
            let mut net = load_net(&args, "pruned.admmnet")?;
            let masks = pipeline::masks_from_zeros(&net);
            let run = pipeline::run_cluster(&cfg, &mut net, &masks, &train, &test)?;
            std::fs::create_dir_all(&args.out)?;
            checkpoint::save(&net, &args.out.join("clustered.admmnet"))?;
            std::fs::write(
                args.out.join("cluster_residuals.csv"),
                run.discretize.trace.to_csv(),
            )?;
            std::fs::write(
                args.out.join("cluster_codebooks.json"),
                serde_json::to_string_pretty(&run.codebooks).expect("codebooks serialize"),
            )?;
            summary.accuracy_before = Some(run.accuracy_before);
            summary.accuracy_after = Some(run.accuracy_after);
            summary.per_layer_nonzeros = Some(nonzeros(&net));
            summary.converged = Some(run.discretize.converged);
            summary.timing = Some(timing(start));
            write_summary(&args.out, "cluster_summary.json", &summary)
        }
        Command::Joint(args) => {
            let start = Instant::now();
            let cfg = load_config(&args)?;
            let mut summary = RunSummary::new(&cfg.recipe, "joint", cfg.seed);
            if matches!(cfg.model, ModelConfig::LeastSquares { .. }) {
                if cfg.admm.mode != Mode::Joint {
                    return Err(Error::Config("joint subcommand needs admm.mode = joint".into()));
                }
                let toy = pipeline::run_toy(&cfg)?;
                summary.achieved_objective = Some(toy.achieved_objective);
                summary.oracle_objective = Some(toy.oracle_objective);
                summary.converged = Some(toy.converged);
                std::fs::create_dir_all(&args.out)?;
                std::fs::write(args.out.join("joint_residuals.csv"), toy.trace.to_csv())?;
                summary.timing = Some(timing(start));
                return write_summary(&args.out, "joint_summary.json", &summary);
            }
            let (train, test) = pipeline::load_data(&cfg.data, &args.data_dir, cfg.seed)?;
            let mut net = load_net(&args, "baseline.admmnet")?;
            let run = pipeline::run_joint(&cfg, &mut net, &train, &test)?;
            std::fs::create_dir_all(&args.out)?;
            checkpoint::save(&net, &args.out.join("joint.admmnet"))?;
            std::fs::write(args.out.join("joint_residuals.csv"), run.outcome.trace.to_csv())?;
            std::fs::write(
                args.out.join("joint_codebooks.json"),
                serde_json::to_string_pretty(&run.codebooks).expect("codebooks serialize"),
            )?;
            summary.accuracy_before = Some(run.accuracy_before);
            summary.accuracy_after = Some(run.accuracy_after);
            summary.per_layer_nonzeros = Some(nonzeros(&net));
            summary.converged = Some(run.outcome.converged);
            summary.timing = Some(timing(start));
            write_summary(&args.out, "joint_summary.json", &summary)
        }
        Command::Eval(args) => {
            let start = Instant::now();
            let cfg = load_config(&args)?;
            let mut summary = RunSummary::new(&cfg.recipe, "eval", cfg.seed);
            let (_, test) = pipeline::load_data(&cfg.data, &args.data_dir, cfg.seed)?;
            let net = load_net(&args, "baseline.admmnet")?;
            let accuracy = pipeline::evaluate(&net, &test)?;
            summary.accuracy_after = Some(accuracy);
            summary.per_layer_nonzeros = Some(nonzeros(&net));
            summary.timing = Some(timing(start));
            write_summary(&args.out, "eval_summary.json", &summary)
        }
        Command::Report {
            stats,
            model,
            exclude_codebook,
            out,
        } => {
            let stats: Vec<LayerStats> = match (stats, model) {
                (Some(path), None) => {
                    let text = std::fs::read_to_string(&path)?;
                    serde_json::from_str(&text).map_err(|e| Error::Schema(e.to_string()))?
                }
                (None, Some(path)) => {
                    let bytes = std::fs::read(&path)?;
                    CompressedModel::decode(&bytes)?.layer_stats()
                }
                _ => {
                    return Err(Error::Input(
                        "report needs exactly one of --stats or --model".into(),
                    ))
                }
            };
            let report = compute_ratios(&stats, !exclude_codebook)?;
            let json = serde_json::to_string_pretty(&report).expect("report serializes");
            std::fs::create_dir_all(&out)?;
            std::fs::write(out.join("report.json"), &json)?;
            println!("{}", json);
            Ok(())
        }
        Command::Pack {
            checkpoint: ckpt,
            codebooks,
            out,
        } => {
            let net = checkpoint::load(&ckpt)?;
            let text = std::fs::read_to_string(&codebooks)?;
            let codebooks: Vec<Codebook> =
                serde_json::from_str(&text).map_err(|e| Error::Schema(e.to_string()))?;
            let masks = pipeline::masks_from_zeros(&net);
            let model = CompressedModel::from_network(&net, &masks, &codebooks)?;
            let bytes = model.encode();
            std::fs::create_dir_all(&out)?;
            let path = out.join("model.admmc");
            std::fs::write(&path, &bytes)?;
            let report = compute_ratios(&model.layer_stats(), true)?;
            std::fs::write(
                out.join("pack_report.json"),
                serde_json::to_string_pretty(&report).expect("report serializes"),
            )?;
            println!("{} ({} bytes)", path.display(), bytes.len());
            Ok(())
        }
        Command::Unpack { model, out } => {
            let bytes = std::fs::read(&model)?;
            let decoded = CompressedModel::decode(&bytes)?;
            let net = decoded.to_network()?;
            std::fs::create_dir_all(&out)?;
            let path = out.join("unpacked.admmnet");
            checkpoint::save(&net, &path)?;
            println!("{}", path.display());
            Ok(())
        }
    }
}
