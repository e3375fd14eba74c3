//! `gncl` command line: train one cell, sweep a method-by-lambda grid,
//! decompose checkpoints, or self-test the gradients.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use gncl::data::Dataset;
use gncl::harness::{
    self, build_datasets, decompose_from_checkpoints, run_experiment, train_single,
    write_outputs, ExperimentConfig,
};
use gncl::losses::{LossKind, LossTag};
use gncl::network::{gradient_check, Activation, DenseNet};

#[derive(Parser)]
#[command(name = "gncl", version, about = "Ensemble training with explicit diversity control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a single (method, lambda, seed) cell and save checkpoints.
    Train(RunArgs),
    /// Run the full method-by-lambda-by-seed grid.
    Sweep(RunArgs),
    /// Decompose a dataset under an ensemble loaded from checkpoints.
    Decompose(DecomposeArgs),
    /// Finite-difference self-test of the network and loss gradients.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (JSON).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in config: "desk" or "paper-protocol".
    #[arg(long)]
    preset: Option<String>,
    /// Overrides the config seed (and the GNCL_SEED environment variable).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for metrics.csv, manifest.json and checkpoints.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Concurrent cells.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Evaluate after every epoch instead of final-only.
    #[arg(long)]
    per_epoch: bool,
}

#[derive(Args)]
struct DecomposeArgs {
    /// Experiment config providing the dataset and loss.
    #[arg(long)]
    config: PathBuf,
    /// Member checkpoint, repeatable.
    #[arg(long = "checkpoint", required = true)]
    checkpoints: Vec<PathBuf>,
    /// Which part of the dataset to decompose.
    #[arg(long, default_value = "all", value_parser = ["train", "test", "all"])]
    split: String,
    /// Emit per-sample rows in the report.
    #[arg(long)]
    per_sample: bool,
    /// Hidden activation of the checkpointed networks.
    #[arg(long, default_value = "relu", value_parser = ["relu", "identity"])]
    activation: String,
    /// Evaluate the checkpoints with sign-binarized forward passes.
    #[arg(long)]
    binarized: bool,
    /// Output directory for report.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Loss to check: a loss name or "all".
    #[arg(long, default_value = "all")]
    loss: String,
    /// Comma-separated layer dims; the output dim is adjusted per loss.
    #[arg(long, default_value = "8,16,16,4")]
    dims: String,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    tolerance: f64,
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run() -> anyhow::Result<ExitCode> {
    match Cli::parse().command {
        Command::Train(args) => run_train(args),
        Command::Sweep(args) => run_sweep(args),
        Command::Decompose(args) => run_decompose(args),
        Command::Gradcheck(args) => run_gradcheck(args),
    }
}

fn load_run_config(args: &RunArgs) -> anyhow::Result<ExperimentConfig> {
    let mut config = match (&args.config, &args.preset) {
        (Some(path), None) => {
            ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?
        }
        (None, Some(name)) => ExperimentConfig::preset(name)?,
        (None, None) => bail!("either --config or --preset is required"),
        (Some(_), Some(_)) => unreachable!("clap conflicts_with"),
    };
    if let Some(seed) = harness::env_seed()? {
        config.seed = seed;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if args.per_epoch {
        config.per_epoch = true;
    }
    if let Some(out) = &args.out {
        config.out_dir = Some(out.clone());
    }
    Ok(config)
}

fn out_dir_of(config: &ExperimentConfig) -> PathBuf {
    config
        .out_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("gncl-out"))
}

fn run_train(args: RunArgs) -> anyhow::Result<ExitCode> {
    let config = load_run_config(&args)?;
    let started = Instant::now();
    let (ensemble, outcome) = train_single(&config)?;
    let out_dir = out_dir_of(&config);
    write_outputs(&out_dir, &config, &outcome, started.elapsed().as_secs_f64())?;
    for (i, member) in ensemble.members.iter().enumerate() {
        member.save(&out_dir.join(format!("member_{i:02}.bin")))?;
    }
    println!(
        "trained {} ({} members) in {:.2}s; outputs in {}",
        ensemble.method.name(),
        ensemble.members.len(),
        started.elapsed().as_secs_f64(),
        out_dir.display()
    );
    for row in &outcome.rows {
        println!(
            "  epoch {}: train_loss {:.6} acc {:.4} member_acc {:.4} diversity {:.6}",
            row.epoch, row.train_loss, row.test_acc_ensemble, row.test_acc_member_avg,
            row.diversity_test
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn run_sweep(args: RunArgs) -> anyhow::Result<ExitCode> {
    let workers = args.workers;
    let config = load_run_config(&args)?;
    let started = Instant::now();
    let outcome = run_experiment(&config, workers)?;
    let out_dir = out_dir_of(&config);
    write_outputs(&out_dir, &config, &outcome, started.elapsed().as_secs_f64())?;
    println!(
        "sweep finished: {} rows, {} failures, {:.2}s; outputs in {}",
        outcome.rows.len(),
        outcome.failures.len(),
        started.elapsed().as_secs_f64(),
        out_dir.display()
    );
    if let Some(trend) = &outcome.trend {
        println!(
            "lambda trend: spearman(lambda, diversity) = {:.4}, spearman(lambda, member_acc) = {:.4}",
            trend.mean_spearman_lambda_diversity, trend.mean_spearman_lambda_member_acc
        );
    }
    for failure in &outcome.failures {
        eprintln!(
            "cell failed: {} lambda {:?} seed {}: {}",
            failure.method, failure.lambda, failure.seed, failure.error
        );
    }
    if outcome.failures.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::FAILURE)
    }
}

fn pick_split(split: &str, train: Dataset, test: Dataset) -> Dataset {
    match split {
        "train" => train,
        "test" => test,
        _ => {
            let mut all = train;
            all.features.extend(test.features);
            all.labels.extend(test.labels);
            all.name = all.name.trim_end_matches("-train").to_string();
            all
        }
    }
}

fn run_decompose(args: DecomposeArgs) -> anyhow::Result<ExitCode> {
    let config = ExperimentConfig::load(&args.config)?;
    let (train_data, test_data, kind) = build_datasets(&config)?;
    let data = pick_split(&args.split, train_data, test_data);
    let report = decompose_from_checkpoints(
        &args.checkpoints,
        &data,
        &kind,
        args.per_sample,
        Activation::from_name(&args.activation)?,
        args.binarized,
    )?;
    let residual = report.identity_residual();
    println!(
        "ensemble_loss {:.6} = avg_member_loss {:.6} - diversity {:.6} + remainder {:.6}",
        report.ensemble_loss, report.avg_member_loss, report.diversity, report.empirical_remainder
    );
    println!("remainder_bound {}", report.remainder_bound);
    println!("identity residual {residual:.3e}");
    let out_dir = args.out.unwrap_or_else(|| PathBuf::from("gncl-out"));
    std::fs::create_dir_all(&out_dir)?;
    std::fs::write(
        out_dir.join("report.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    println!("report written to {}", out_dir.join("report.json").display());
    Ok(ExitCode::SUCCESS)
}

fn run_gradcheck(args: GradcheckArgs) -> anyhow::Result<ExitCode> {
    let dims: Vec<usize> = args
        .dims
        .split(',')
        .map(|d| d.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .context("parsing --dims")?;
    if dims.len() < 2 {
        bail!("--dims needs at least input and output dims");
    }
    let tags: Vec<LossTag> = if args.loss == "all" {
        vec![
            LossTag::Mse,
            LossTag::Nll,
            LossTag::CrossEntropySoftmax,
            LossTag::Exponential,
            LossTag::GaussianHinge,
        ]
    } else {
        vec![args.loss.parse()?]
    };
    let mut all_passed = true;
    for tag in tags {
        let c = match tag {
            LossTag::Mse | LossTag::Exponential | LossTag::GaussianHinge => 1,
            _ => dims[dims.len() - 1].max(2),
        };
        let kind = LossKind::new(tag, c, gncl::losses::DEFAULT_NLL_CLAMP)?;
        let mut net_dims = dims.clone();
        *net_dims.last_mut().unwrap() = c;
        let mut net = DenseNet::init(args.seed, &net_dims, false)?;
        if tag == LossTag::Nll {
            // The negative-likelihood loss consumes positive scores; shift
            // the output biases so the probe net lives in its domain.
            for row in 0..c {
                *net.bias_mut(net_dims.len() - 2, row) += 2.0;
            }
        }
        let report = gradient_check(&net, &kind, args.tolerance)?;
        println!(
            "{:<14} dims {:?}: max_rel_err {:.3e} ({} params) ... {}",
            tag.to_string(),
            net_dims,
            report.max_rel_err,
            report.param_count,
            if report.passed { "pass" } else { "FAIL" }
        );
        all_passed &= report.passed;
    }
    Ok(if all_passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}
