//! Experiment runner: method-by-lambda sweeps over seeded cells, final and
//! per-epoch metrics, and machine-readable outputs.
//!
//! A sweep expands to one cell per `(method, lambda, seed)` triple. Cells run
//! concurrently up to a worker limit; rows are collected in deterministic
//! cell order, so `metrics.csv` is byte-identical for a fixed config at any
//! worker count.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bound::Bound;
use crate::data::{self, Dataset};
use crate::decomposition::{decompose_dataset, DecompositionReport};
use crate::error::{Error, Result};
use crate::losses::{LossKind, LossTag};
use crate::network::{Activation, DenseNet, LrSchedule, OptimizerConfig, OptimizerKind};
use crate::training::{
    self, train_with_observer, Ensemble, MethodSpec, NetTemplate, TrainConfig,
    PROTOCOL_SNAPSHOT_EPOCHS,
};

/// Environment variable that overrides the config seed.
pub const SEED_ENV_VAR: &str = "GNCL_SEED";

/// Exact header of `metrics.csv`.
pub const METRICS_HEADER: &str =
    "method,lambda,seed,epoch,train_loss,test_acc_ensemble,test_acc_member_avg,diversity_test,remainder_bound_test";

/// Dataset source: a seeded generator or files on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetSpec {
    Blobs {
        n_per_class: usize,
        classes: usize,
        #[serde(default = "default_blob_dims")]
        dims: usize,
        spread: f64,
        seed: u64,
    },
    Spirals {
        n_per_class: usize,
        classes: usize,
        noise: f64,
        seed: u64,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
    },
    Csv {
        path: PathBuf,
        label_column: usize,
        #[serde(default)]
        has_header: bool,
    },
}

fn default_blob_dims() -> usize {
    2
}

impl DatasetSpec {
    fn seed(&self) -> Option<u64> {
        match self {
            DatasetSpec::Blobs { seed, .. } | DatasetSpec::Spirals { seed, .. } => Some(*seed),
            _ => None,
        }
    }
}

/// Network template: hidden widths only; input and output dims come from the
/// dataset and loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetSpec {
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub binarized: bool,
    #[serde(default = "default_activation")]
    pub activation: String,
}

fn default_hidden() -> Vec<usize> {
    vec![16]
}

fn default_activation() -> String {
    "relu".into()
}

impl Default for NetSpec {
    fn default() -> Self {
        NetSpec {
            hidden: default_hidden(),
            binarized: false,
            activation: default_activation(),
        }
    }
}

/// Optimization and loss settings. Defaults are the desk-scale protocol:
/// M = 8, 30 epochs, batch 32, SGD momentum at 0.01 halved every 10 epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSpec {
    pub members: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: String,
    pub learning_rate: f64,
    pub halve_every: usize,
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub loss: String,
    pub nll_clamp: f64,
}

impl Default for TrainSpec {
    fn default() -> Self {
        TrainSpec {
            members: 8,
            epochs: 30,
            batch_size: 32,
            optimizer: "sgd".into(),
            learning_rate: 0.01,
            halve_every: 10,
            momentum: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            loss: "crossentropy".into(),
            nll_clamp: 1e-12,
        }
    }
}

/// The full-scale protocol settings: M = 16, 100 epochs, batch 128,
/// AdaBelief at 0.001 halved every 25 epochs.
pub fn paper_protocol_train_spec() -> TrainSpec {
    TrainSpec {
        members: 16,
        epochs: 100,
        batch_size: 128,
        optimizer: "adabelief".into(),
        learning_rate: 0.001,
        halve_every: 25,
        ..TrainSpec::default()
    }
}

/// A complete experiment description, loadable from a JSON config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub dataset: DatasetSpec,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default)]
    pub normalize: bool,
    #[serde(default)]
    pub net: NetSpec,
    #[serde(default)]
    pub train: TrainSpec,
    pub methods: Vec<MethodSpec>,
    #[serde(default)]
    pub lambda_grid: Vec<f64>,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default)]
    pub per_epoch: bool,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

fn default_test_fraction() -> f64 {
    0.25
}

fn default_repeats() -> usize {
    1
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let config: ExperimentConfig = serde_json::from_str(&text)?;
        config.validate()?;
        Ok(config)
    }

    /// Desk-scale lambda sweep on the spirals task (400 train / 200 test).
    pub fn desk_preset() -> Self {
        ExperimentConfig {
            seed: 42,
            dataset: DatasetSpec::Spirals {
                n_per_class: 300,
                classes: 2,
                noise: 0.08,
                seed: 1,
            },
            test_fraction: 1.0 / 3.0,
            normalize: false,
            net: NetSpec::default(),
            train: TrainSpec::default(),
            methods: vec![MethodSpec::Gncl { lambda: 0.0 }],
            lambda_grid: (0..=10).map(|i| i as f64 / 10.0).collect(),
            repeats: 3,
            per_epoch: false,
            out_dir: None,
        }
    }

    /// Full-scale protocol shape: 16 members, all methods, full lambda grid.
    pub fn paper_protocol_preset() -> Self {
        ExperimentConfig {
            train: paper_protocol_train_spec(),
            methods: vec![
                MethodSpec::Gncl { lambda: 0.0 },
                MethodSpec::Bagging,
                MethodSpec::Wagging {
                    poisson_variant: Default::default(),
                },
                MethodSpec::Smcl,
                MethodSpec::Snapshot {
                    snapshot_epochs: PROTOCOL_SNAPSHOT_EPOCHS.to_vec(),
                },
                MethodSpec::GradBoost,
            ],
            ..Self::desk_preset()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk_preset()),
            "paper-protocol" => Ok(Self::paper_protocol_preset()),
            other => Err(Error::config(format!(
                "unknown preset {other:?} (expected desk or paper-protocol)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::config("config lists no methods"));
        }
        for lambda in &self.lambda_grid {
            if !(0.0..=1.0).contains(lambda) {
                return Err(Error::config(format!(
                    "lambda grid value {lambda} is outside [0, 1]"
                )));
            }
        }
        if self.repeats == 0 {
            return Err(Error::config("repeats must be at least 1"));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::config("test_fraction must lie strictly in (0, 1)"));
        }
        Ok(())
    }
}

/// Reads and parses the seed override from the environment.
pub fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV_VAR) {
        Ok(text) => text
            .parse::<u64>()
            .map(Some)
            .map_err(|_| Error::config(format!("{SEED_ENV_VAR} must be an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

/// Builds the train/test datasets and the resolved loss for a config.
pub fn build_datasets(config: &ExperimentConfig) -> Result<(Dataset, Dataset, LossKind)> {
    let full = match &config.dataset {
        DatasetSpec::Blobs {
            n_per_class,
            classes,
            dims,
            spread,
            seed,
        } => data::gen_blobs(*seed, *n_per_class, *classes, *dims, *spread)?,
        DatasetSpec::Spirals {
            n_per_class,
            classes,
            noise,
            seed,
        } => data::gen_spirals(*seed, *n_per_class, *classes, *noise)?,
        DatasetSpec::Idx { images, labels } => data::load_idx(images, labels)?,
        DatasetSpec::Csv {
            path,
            label_column,
            has_header,
        } => data::load_csv(path, *label_column, *has_header)?,
    };
    let split_seed = config.dataset.seed().unwrap_or(config.seed);
    let (mut train, mut test) = data::train_test_split(&full, config.test_fraction, split_seed)?;
    if config.normalize {
        let (normed, stats) = data::normalize(&train)?;
        train = normed;
        test = data::apply_normalization(&test, &stats)?;
    }
    let tag: LossTag = config.train.loss.parse()?;
    let needs_scalar = matches!(
        tag,
        LossTag::Mse | LossTag::Exponential | LossTag::GaussianHinge
    );
    if needs_scalar && train.class_count == 2 {
        train = train.to_signed_binary()?;
        test = test.to_signed_binary()?;
    }
    let c = if needs_scalar { 1 } else { train.class_count };
    if !needs_scalar && train.class_count < 2 {
        return Err(Error::config(format!(
            "loss {} needs a multiclass dataset, got label width {}",
            tag, train.class_count
        )));
    }
    if needs_scalar && train.class_count != 1 {
        return Err(Error::config(format!(
            "loss {tag} needs scalar or two-class labels, got {} classes",
            train.class_count
        )));
    }
    let kind = LossKind::new(tag, c, config.train.nll_clamp)?;
    Ok((train, test, kind))
}

fn resolve_train_config(
    config: &ExperimentConfig,
    kind: &LossKind,
    feature_dim: usize,
    method: &MethodSpec,
    seed: u64,
) -> Result<TrainConfig> {
    let mut layer_dims = Vec::with_capacity(config.net.hidden.len() + 2);
    layer_dims.push(feature_dim);
    layer_dims.extend_from_slice(&config.net.hidden);
    layer_dims.push(kind.output_dim());
    let members = match method {
        MethodSpec::Snapshot { snapshot_epochs } => {
            let derived = snapshot_epochs.len() + 1;
            if derived != config.train.members {
                return Err(Error::config(format!(
                    "snapshot schedule implies M = {derived} but config sets members = {}",
                    config.train.members
                )));
            }
            derived
        }
        _ => config.train.members,
    };
    Ok(TrainConfig {
        members,
        epochs: config.train.epochs,
        batch_size: config.train.batch_size,
        seed,
        optimizer: OptimizerConfig {
            kind: OptimizerKind::from_name(&config.train.optimizer)?,
            momentum: config.train.momentum,
            beta1: config.train.beta1,
            beta2: config.train.beta2,
            epsilon: config.train.epsilon,
        },
        schedule: LrSchedule::new(config.train.learning_rate, config.train.halve_every)?,
        loss: kind.clone(),
        template: NetTemplate {
            layer_dims,
            binarized: config.net.binarized,
            activation: Activation::from_name(&config.net.activation)?,
        },
    })
}

/// Evaluation fragment of a metrics row.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalMetrics {
    pub test_acc_ensemble: f64,
    pub test_acc_member_avg: f64,
    pub diversity_test: f64,
    pub remainder_bound_test: Bound,
}

fn argmax_tie_low(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn prediction_correct(pred: &[f64], label: &[f64]) -> bool {
    if pred.len() == 1 {
        // Scalar scores: sign agreement, sign(0) = +1.
        let sign = if pred[0] >= 0.0 { 1.0 } else { -1.0 };
        sign == label[0]
    } else {
        argmax_tie_low(pred) == argmax_tie_low(label)
    }
}

/// Ensemble accuracy (argmax with ties to the lowest index), mean member
/// accuracy, and the test-set diversity and remainder bound of the
/// decomposition.
pub fn evaluate(members: &[DenseNet], data: &Dataset, kind: &LossKind) -> Result<EvalMetrics> {
    if members.is_empty() {
        return Err(Error::contract("evaluate needs at least one member"));
    }
    if data.is_empty() {
        return Err(Error::contract("evaluate needs a nonempty dataset"));
    }
    let n = data.len() as f64;
    let mut ensemble_hits = 0usize;
    let mut member_hits = vec![0usize; members.len()];
    for (x, y) in data.features.iter().zip(&data.labels) {
        let outputs: Vec<Vec<f64>> = members
            .iter()
            .map(|net| net.forward(x))
            .collect::<Result<_>>()?;
        let f = crate::decomposition::ensemble_mean(&outputs)?;
        if prediction_correct(&f, y) {
            ensemble_hits += 1;
        }
        for (hits, out) in member_hits.iter_mut().zip(&outputs) {
            if prediction_correct(out, y) {
                *hits += 1;
            }
        }
    }
    let report = decompose_dataset(members, data, kind, false)?;
    let member_avg = member_hits.iter().map(|&h| h as f64 / n).sum::<f64>() / members.len() as f64;
    Ok(EvalMetrics {
        test_acc_ensemble: ensemble_hits as f64 / n,
        test_acc_member_avg: member_avg,
        diversity_test: report.diversity,
        remainder_bound_test: report.remainder_bound,
    })
}

/// Which training point a metrics row describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpochColumn {
    Epoch(usize),
    Final,
}

impl std::fmt::Display for EpochColumn {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EpochColumn::Epoch(e) => write!(f, "{e}"),
            EpochColumn::Final => write!(f, "final"),
        }
    }
}

/// One `metrics.csv` row.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub method: String,
    pub lambda: Option<f64>,
    pub seed: u64,
    pub epoch: EpochColumn,
    pub train_loss: f64,
    pub test_acc_ensemble: f64,
    pub test_acc_member_avg: f64,
    pub diversity_test: f64,
    pub remainder_bound_test: Bound,
}

impl MetricsRow {
    fn to_csv_line(&self) -> String {
        let lambda = self.lambda.map(|l| l.to_string()).unwrap_or_default();
        format!(
            "{},{lambda},{},{},{},{},{},{},{}",
            self.method,
            self.seed,
            self.epoch,
            self.train_loss,
            self.test_acc_ensemble,
            self.test_acc_member_avg,
            self.diversity_test,
            self.remainder_bound_test
        )
    }
}

/// Renders rows under the stable header.
pub fn format_metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&row.to_csv_line());
        out.push('\n');
    }
    out
}

/// A cell that failed; the sweep records it and continues.
#[derive(Debug, Clone, Serialize)]
pub struct CellFailure {
    pub method: String,
    pub lambda: Option<f64>,
    pub seed: u64,
    pub error: String,
}

/// Spearman rank correlations of the lambda sweep, per seed and averaged.
#[derive(Debug, Clone, Serialize)]
pub struct TrendSummary {
    pub per_seed: Vec<SeedTrend>,
    pub mean_spearman_lambda_diversity: f64,
    pub mean_spearman_lambda_member_acc: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SeedTrend {
    pub seed: u64,
    pub spearman_lambda_diversity: f64,
    pub spearman_lambda_member_acc: f64,
}

/// Everything a sweep produced, in deterministic cell order.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub rows: Vec<MetricsRow>,
    pub failures: Vec<CellFailure>,
    pub trend: Option<TrendSummary>,
    pub metrics_csv: String,
}

#[derive(Debug, Clone)]
struct Cell {
    method: MethodSpec,
    lambda: Option<f64>,
    seed: u64,
}

fn expand_cells(config: &ExperimentConfig) -> Vec<Cell> {
    let mut cells = Vec::new();
    for method in &config.methods {
        let lambdas: Vec<Option<f64>> = if method.is_lambda_parameterized() {
            if config.lambda_grid.is_empty() {
                vec![method.lambda()]
            } else {
                config.lambda_grid.iter().copied().map(Some).collect()
            }
        } else {
            vec![None]
        };
        for lambda in lambdas {
            for rep in 0..config.repeats {
                let seed = config.seed.wrapping_add(rep as u64);
                let method = match lambda {
                    Some(l) => method.with_lambda(l),
                    None => method.clone(),
                };
                cells.push(Cell {
                    lambda: method.lambda(),
                    method,
                    seed,
                });
            }
        }
    }
    cells
}

fn run_cell(
    config: &ExperimentConfig,
    cell: &Cell,
    train_data: &Dataset,
    test_data: &Dataset,
    kind: &LossKind,
) -> Result<Vec<MetricsRow>> {
    let train_config =
        resolve_train_config(config, kind, train_data.feature_dim(), &cell.method, cell.seed)?;
    let mut rows = Vec::new();
    let per_epoch = config.per_epoch;
    let mut epoch_error: Option<Error> = None;
    let ensemble = train_with_observer(
        &cell.method,
        &train_config,
        train_data,
        &mut |epoch, members, stat| {
            if per_epoch && epoch_error.is_none() {
                match evaluate(members, test_data, kind) {
                    Ok(metrics) => rows.push(MetricsRow {
                        method: cell.method.name().to_string(),
                        lambda: cell.lambda,
                        seed: cell.seed,
                        epoch: EpochColumn::Epoch(epoch),
                        train_loss: stat.objective_loss,
                        test_acc_ensemble: metrics.test_acc_ensemble,
                        test_acc_member_avg: metrics.test_acc_member_avg,
                        diversity_test: metrics.diversity_test,
                        remainder_bound_test: metrics.remainder_bound_test,
                    }),
                    Err(e) => epoch_error = Some(e),
                }
            }
        },
    )?;
    if let Some(e) = epoch_error {
        return Err(e);
    }
    let final_train_loss = match ensemble.history.last() {
        Some(stat) => stat.objective_loss,
        None => training::ensemble_dataset_loss(&ensemble.members, train_data, kind)?,
    };
    let metrics = evaluate(&ensemble.members, test_data, kind)?;
    rows.push(MetricsRow {
        method: cell.method.name().to_string(),
        lambda: cell.lambda,
        seed: cell.seed,
        epoch: EpochColumn::Final,
        train_loss: final_train_loss,
        test_acc_ensemble: metrics.test_acc_ensemble,
        test_acc_member_avg: metrics.test_acc_member_avg,
        diversity_test: metrics.diversity_test,
        remainder_bound_test: metrics.remainder_bound_test,
    });
    Ok(rows)
}

/// Runs the full `(method, lambda, seed)` grid. Cell order, and therefore the
/// CSV body, is independent of the worker count.
pub fn run_experiment(config: &ExperimentConfig, workers: usize) -> Result<ExperimentOutcome> {
    config.validate()?;
    let (train_data, test_data, kind) = build_datasets(config)?;
    let cells = expand_cells(config);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::config(format!("worker pool: {e}")))?;
    let results: Vec<Result<Vec<MetricsRow>>> = pool.install(|| {
        cells
            .par_iter()
            .map(|cell| run_cell(config, cell, &train_data, &test_data, &kind))
            .collect()
    });
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (cell, result) in cells.iter().zip(results) {
        match result {
            Ok(cell_rows) => rows.extend(cell_rows),
            Err(e) => failures.push(CellFailure {
                method: cell.method.name().to_string(),
                lambda: cell.lambda,
                seed: cell.seed,
                error: e.to_string(),
            }),
        }
    }
    let trend = lambda_trend(&rows);
    let metrics_csv = format_metrics_csv(&rows);
    Ok(ExperimentOutcome {
        rows,
        failures,
        trend,
        metrics_csv,
    })
}

/// Sweeps lambda for the blended objective and summarizes the trend.
/// Requires at least three grid points.
pub fn sweep_lambda(config: &ExperimentConfig, workers: usize) -> Result<ExperimentOutcome> {
    if config.lambda_grid.len() < 3 {
        return Err(Error::config(
            "lambda sweep needs a grid with at least 3 points",
        ));
    }
    let mut config = config.clone();
    config.methods = vec![MethodSpec::Gncl { lambda: 0.0 }];
    run_experiment(&config, workers)
}

/// Computes per-seed Spearman correlations between lambda and the final-row
/// diversity / member accuracy, for the lambda-parameterized rows.
fn lambda_trend(rows: &[MetricsRow]) -> Option<TrendSummary> {
    let final_rows: Vec<&MetricsRow> = rows
        .iter()
        .filter(|r| r.epoch == EpochColumn::Final && r.lambda.is_some() && r.method == "gncl")
        .collect();
    let mut seeds: Vec<u64> = final_rows.iter().map(|r| r.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    let mut per_seed = Vec::new();
    for &seed in &seeds {
        let seed_rows: Vec<&&MetricsRow> =
            final_rows.iter().filter(|r| r.seed == seed).collect();
        if seed_rows.len() < 3 {
            continue;
        }
        let lambdas: Vec<f64> = seed_rows.iter().map(|r| r.lambda.unwrap()).collect();
        let diversity: Vec<f64> = seed_rows.iter().map(|r| r.diversity_test).collect();
        let member_acc: Vec<f64> = seed_rows.iter().map(|r| r.test_acc_member_avg).collect();
        per_seed.push(SeedTrend {
            seed,
            spearman_lambda_diversity: spearman(&lambdas, &diversity),
            spearman_lambda_member_acc: spearman(&lambdas, &member_acc),
        });
    }
    if per_seed.is_empty() {
        return None;
    }
    let n = per_seed.len() as f64;
    Some(TrendSummary {
        mean_spearman_lambda_diversity: per_seed
            .iter()
            .map(|t| t.spearman_lambda_diversity)
            .sum::<f64>()
            / n,
        mean_spearman_lambda_member_acc: per_seed
            .iter()
            .map(|t| t.spearman_lambda_member_acc)
            .sum::<f64>()
            / n,
        per_seed,
    })
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).unwrap());
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        // Average rank over ties, 1-indexed.
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            out[idx[k]] = rank;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation with average ranks for ties. A zero-variance
/// side makes the correlation 0 by convention.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len(), "spearman needs paired samples");
    if xs.len() < 2 {
        return 0.0;
    }
    let rx = ranks(xs);
    let ry = ranks(ys);
    let n = xs.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    if vx <= 0.0 || vy <= 0.0 {
        return 0.0;
    }
    cov / (vx * vy).sqrt()
}

#[derive(Serialize)]
struct Manifest<'a> {
    version: &'static str,
    config: &'a ExperimentConfig,
    cells: usize,
    failures: &'a [CellFailure],
    wall_time_secs: f64,
    created_unix: u64,
}

/// Writes `metrics.csv`, `manifest.json` and (when a lambda sweep is
/// present) `trend.json`. Only the manifest carries timestamps.
pub fn write_outputs(
    out_dir: &Path,
    config: &ExperimentConfig,
    outcome: &ExperimentOutcome,
    wall_time_secs: f64,
) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("metrics.csv"), &outcome.metrics_csv)?;
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION"),
        config,
        cells: outcome.rows.len() + outcome.failures.len(),
        failures: &outcome.failures,
        wall_time_secs,
        created_unix: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    };
    std::fs::write(
        out_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    if let Some(trend) = &outcome.trend {
        std::fs::write(
            out_dir.join("trend.json"),
            serde_json::to_string_pretty(trend)?,
        )?;
    }
    Ok(())
}

/// Trains exactly one cell (the first method at its own lambda, the base
/// seed) and returns the ensemble with its final metrics row.
pub fn train_single(config: &ExperimentConfig) -> Result<(Ensemble, ExperimentOutcome)> {
    config.validate()?;
    if config.methods.len() != 1 {
        return Err(Error::config(format!(
            "train runs one cell; config lists {} methods",
            config.methods.len()
        )));
    }
    let (train_data, test_data, kind) = build_datasets(config)?;
    let method = config.methods[0].clone();
    let cell = Cell {
        lambda: method.lambda(),
        method: method.clone(),
        seed: config.seed,
    };
    let train_config =
        resolve_train_config(config, &kind, train_data.feature_dim(), &method, config.seed)?;
    let ensemble = training::train(&method, &train_config, &train_data)?;
    let rows = run_cell(config, &cell, &train_data, &test_data, &kind)?;
    let metrics_csv = format_metrics_csv(&rows);
    Ok((
        ensemble,
        ExperimentOutcome {
            rows,
            failures: Vec::new(),
            trend: None,
            metrics_csv,
        },
    ))
}

/// Loads member checkpoints, checks they agree in shape, and decomposes the
/// dataset under the reconstructed ensemble.
pub fn decompose_from_checkpoints(
    paths: &[PathBuf],
    data: &Dataset,
    kind: &LossKind,
    per_sample: bool,
    activation: Activation,
    binarized: bool,
) -> Result<DecompositionReport> {
    if paths.is_empty() {
        return Err(Error::config("no checkpoints given"));
    }
    let mut members = Vec::with_capacity(paths.len());
    for path in paths {
        let mut net = DenseNet::load(path)?.with_activation(activation);
        net.set_binarized(binarized);
        members.push(net);
    }
    let dims0 = members[0].dims().to_vec();
    for (path, net) in paths.iter().zip(&members) {
        if net.dims() != dims0.as_slice() {
            return Err(Error::shape(format!(
                "checkpoint {} has dims {:?}, expected {:?}",
                path.display(),
                net.dims(),
                dims0
            )));
        }
    }
    decompose_dataset(&members, data, kind, per_sample)
}
