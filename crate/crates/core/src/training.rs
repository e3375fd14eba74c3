//! Ensemble trainers.
//!
//! The lambda-blended objective (`gncl`) interpolates between independent
//! member training (lambda = 0) and joint end-to-end training of the
//! ensemble loss (lambda = 1):
//!
//! `lambda * loss(f(x), y) + (1 - lambda)/M * sum_i loss(h_i(x), y)`
//!
//! The explicit form (`gncl2`) instead subtracts the Hessian-weighted
//! diversity penalty from the average member loss. Bagging, wagging,
//! stochastic multiple choice learning, snapshot ensembles and greedy
//! gradient boosting share the same dispatch, configuration and seeded
//! determinism: every random draw comes from a stream pre-assigned per
//! purpose, member and epoch, so results are bit-identical at any
//! parallelism level.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::decomposition::ensemble_mean;
use crate::error::{Error, Result};
use crate::losses::{loss_gradient, loss_hessian, loss_value, LossKind};
use crate::network::{
    Activation, DenseNet, LrSchedule, OptimizerConfig, OptimizerState, ParamGrads, Trace,
};
use crate::rng::{self, DetRng};

/// The snapshot epochs of the full-scale protocol; with the final model
/// appended this yields a 16-member ensemble.
pub const PROTOCOL_SNAPSHOT_EPOCHS: [usize; 15] =
    [2, 3, 4, 5, 10, 15, 20, 25, 30, 40, 50, 60, 70, 80, 90];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoissonVariant {
    #[default]
    Discrete,
}

/// Which training objective to run, with its hyperparameters.
///
/// "Independent" and "E2E" are aliases for `gncl` at lambda 0 and 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum MethodSpec {
    Gncl {
        lambda: f64,
    },
    Gncl2 {
        lambda: f64,
    },
    Bagging,
    Wagging {
        #[serde(default)]
        poisson_variant: PoissonVariant,
    },
    Smcl,
    Snapshot {
        snapshot_epochs: Vec<usize>,
    },
    GradBoost,
}

impl MethodSpec {
    pub fn independent() -> Self {
        MethodSpec::Gncl { lambda: 0.0 }
    }

    pub fn end_to_end() -> Self {
        MethodSpec::Gncl { lambda: 1.0 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            MethodSpec::Gncl { .. } => "gncl",
            MethodSpec::Gncl2 { .. } => "gncl2",
            MethodSpec::Bagging => "bagging",
            MethodSpec::Wagging { .. } => "wagging",
            MethodSpec::Smcl => "smcl",
            MethodSpec::Snapshot { .. } => "snapshot",
            MethodSpec::GradBoost => "gradboost",
        }
    }

    pub fn lambda(&self) -> Option<f64> {
        match self {
            MethodSpec::Gncl { lambda } | MethodSpec::Gncl2 { lambda } => Some(*lambda),
            _ => None,
        }
    }

    pub fn is_lambda_parameterized(&self) -> bool {
        matches!(self, MethodSpec::Gncl { .. } | MethodSpec::Gncl2 { .. })
    }

    /// The same method with a different lambda; identity for the others.
    pub fn with_lambda(&self, lambda: f64) -> MethodSpec {
        match self {
            MethodSpec::Gncl { .. } => MethodSpec::Gncl { lambda },
            MethodSpec::Gncl2 { .. } => MethodSpec::Gncl2 { lambda },
            other => other.clone(),
        }
    }
}

/// Network shape shared by all members.
#[derive(Debug, Clone, PartialEq)]
pub struct NetTemplate {
    pub layer_dims: Vec<usize>,
    pub binarized: bool,
    pub activation: Activation,
}

impl NetTemplate {
    fn build(&self, seed: u64) -> Result<DenseNet> {
        Ok(DenseNet::init(seed, &self.layer_dims, self.binarized)?
            .with_activation(self.activation))
    }
}

/// Fully seeded training configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub members: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: OptimizerConfig,
    pub schedule: LrSchedule,
    pub loss: LossKind,
    pub template: NetTemplate,
}

/// Per-epoch training record: the method's own objective and the plain
/// ensemble loss on the training set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStat {
    pub objective_loss: f64,
    pub ensemble_loss: f64,
}

/// A trained ensemble combined by uniform averaging, with its provenance.
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub members: Vec<DenseNet>,
    pub method: MethodSpec,
    pub config: TrainConfig,
    pub history: Vec<EpochStat>,
}

impl Ensemble {
    /// Uniform average of member outputs.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        predict_mean(&self.members, x)
    }
}

/// Uniform-average prediction of a member list.
pub fn predict_mean(members: &[DenseNet], x: &[f64]) -> Result<Vec<f64>> {
    let outputs: Vec<Vec<f64>> = members
        .iter()
        .map(|net| net.forward(x))
        .collect::<Result<_>>()?;
    ensemble_mean(&outputs)
}

/// Mean loss of the uniform-average prediction over a dataset.
pub fn ensemble_dataset_loss(members: &[DenseNet], data: &Dataset, kind: &LossKind) -> Result<f64> {
    let mut sum = 0.0;
    for (x, y) in data.features.iter().zip(&data.labels) {
        let f = predict_mean(members, x)?;
        sum += loss_value(kind, &f, y)?;
    }
    Ok(sum / data.len() as f64)
}

/// Batch loss and per-member parameter gradients of the lambda-blended
/// objective. Gradients reach each member both through the ensemble mean
/// (weight `lambda/M`) and through its own loss (weight `(1-lambda)/M`).
pub fn gncl_batch_loss(
    members: &[DenseNet],
    xs: &[&[f64]],
    ys: &[&[f64]],
    lambda: f64,
    kind: &LossKind,
) -> Result<(f64, Vec<ParamGrads>)> {
    if members.is_empty() {
        return Err(Error::contract("gncl_batch_loss needs at least one member"));
    }
    if xs.is_empty() || xs.len() != ys.len() {
        return Err(Error::contract("batch features and labels must align"));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::contract(format!(
            "gncl lambda must lie in [0, 1], got {lambda}"
        )));
    }
    let m = members.len();
    let mf = m as f64;
    let batch = xs.len() as f64;
    let mut grads: Vec<ParamGrads> = members.iter().map(ParamGrads::zeros_like).collect();
    let mut ensemble_sum = 0.0;
    let mut member_sum = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        let traces: Vec<Trace> = members
            .iter()
            .map(|net| net.forward_trace(x))
            .collect::<Result<_>>()?;
        let outputs: Vec<Vec<f64>> = traces.iter().map(|t| t.output().to_vec()).collect();
        let f = ensemble_mean(&outputs)?;
        let grad_f = loss_gradient(kind, &f, y)?;
        ensemble_sum += loss_value(kind, &f, y)?;
        for i in 0..m {
            let grad_i = loss_gradient(kind, &outputs[i], y)?;
            member_sum += loss_value(kind, &outputs[i], y)?;
            let upstream: Vec<f64> = grad_f
                .iter()
                .zip(&grad_i)
                .map(|(gf, gi)| lambda / mf * gf + (1.0 - lambda) / mf * gi)
                .collect();
            members[i].backward_from_trace(&traces[i], &upstream, &mut grads[i])?;
        }
    }
    for g in &mut grads {
        g.scale(1.0 / batch);
    }
    let loss = lambda * (ensemble_sum / batch) + (1.0 - lambda) * (member_sum / (mf * batch));
    Ok((loss, grads))
}

/// Batch loss and gradients of the explicit diversity-regularized objective
/// `(1/M) sum_i loss(h_i) - (lambda/2M) sum_i d_i^T D d_i`.
///
/// `D` is the loss Hessian at the ensemble mean, treated as a per-sample
/// constant (no gradient flows through it); gradients do flow through
/// `d_i = h_i - f` including the `-f` coupling.
pub fn gncl2_batch_loss(
    members: &[DenseNet],
    xs: &[&[f64]],
    ys: &[&[f64]],
    lambda: f64,
    kind: &LossKind,
) -> Result<(f64, Vec<ParamGrads>)> {
    if members.is_empty() {
        return Err(Error::contract("gncl2_batch_loss needs at least one member"));
    }
    if xs.is_empty() || xs.len() != ys.len() {
        return Err(Error::contract("batch features and labels must align"));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::contract(format!(
            "gncl2 lambda must be a finite nonnegative real, got {lambda}"
        )));
    }
    let m = members.len();
    let mf = m as f64;
    let batch = xs.len() as f64;
    let c = kind.output_dim();
    let mut grads: Vec<ParamGrads> = members.iter().map(ParamGrads::zeros_like).collect();
    let mut loss_sum = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        let traces: Vec<Trace> = members
            .iter()
            .map(|net| net.forward_trace(x))
            .collect::<Result<_>>()?;
        let outputs: Vec<Vec<f64>> = traces.iter().map(|t| t.output().to_vec()).collect();
        let f = ensemble_mean(&outputs)?;
        let hessian = loss_hessian(kind, &f, y)?;
        let deviations: Vec<Vec<f64>> = outputs
            .iter()
            .map(|out| out.iter().zip(&f).map(|(o, fj)| o - fj).collect())
            .collect();
        let matvec = |d: &[f64]| -> Vec<f64> {
            (0..c)
                .map(|i| (0..c).map(|j| hessian[i][j] * d[j]).sum())
                .collect()
        };
        let hd: Vec<Vec<f64>> = deviations.iter().map(|d| matvec(d)).collect();
        let mut coupling = vec![0.0; c];
        for d in &deviations {
            for (s, dj) in coupling.iter_mut().zip(d) {
                *s += dj;
            }
        }
        let h_coupling = matvec(&coupling);
        let mut penalty = 0.0;
        for i in 0..m {
            penalty += deviations[i].iter().zip(&hd[i]).map(|(d, v)| d * v).sum::<f64>();
        }
        for i in 0..m {
            let grad_i = loss_gradient(kind, &outputs[i], y)?;
            loss_sum += loss_value(kind, &outputs[i], y)? / mf;
            let upstream: Vec<f64> = (0..c)
                .map(|j| {
                    grad_i[j] / mf - lambda / mf * hd[i][j] + lambda / (mf * mf) * h_coupling[j]
                })
                .collect();
            members[i].backward_from_trace(&traces[i], &upstream, &mut grads[i])?;
        }
        loss_sum -= lambda / (2.0 * mf) * penalty;
    }
    for g in &mut grads {
        g.scale(1.0 / batch);
    }
    Ok((loss_sum / batch, grads))
}

/// Stage loss and gradients for greedy gradient boosting: the newest member
/// is trained on the running-average ensemble loss
/// `loss((prefix_sum + h_m(x)) / m, y)` with the prefix frozen.
pub fn boost_batch_loss(
    model: &DenseNet,
    prefix_sums: &[&[f64]],
    stage: usize,
    xs: &[&[f64]],
    ys: &[&[f64]],
    kind: &LossKind,
) -> Result<(f64, ParamGrads)> {
    if stage == 0 {
        return Err(Error::contract("boosting stages are 1-indexed"));
    }
    if xs.is_empty() || xs.len() != ys.len() || xs.len() != prefix_sums.len() {
        return Err(Error::contract("batch slices must align"));
    }
    let sf = stage as f64;
    let batch = xs.len() as f64;
    let mut grads = ParamGrads::zeros_like(model);
    let mut loss_sum = 0.0;
    for ((x, y), prefix) in xs.iter().zip(ys).zip(prefix_sums) {
        let trace = model.forward_trace(x)?;
        let out = trace.output();
        let avg: Vec<f64> = prefix.iter().zip(out).map(|(p, o)| (p + o) / sf).collect();
        loss_sum += loss_value(kind, &avg, y)?;
        let grad_avg = loss_gradient(kind, &avg, y)?;
        let upstream: Vec<f64> = grad_avg.iter().map(|g| g / sf).collect();
        model.backward_from_trace(&trace, &upstream, &mut grads)?;
    }
    grads.scale(1.0 / batch);
    Ok((loss_sum / batch, grads))
}

/// `n` draws with replacement from `[0, n)`.
pub fn bootstrap_sample(n: usize, rng: &mut DetRng) -> Vec<usize> {
    assert!(n >= 1, "bootstrap needs at least one sample");
    (0..n).map(|_| rng.u64_below(n as u64) as usize).collect()
}

/// `n` i.i.d. Poisson(1) draws, used as per-sample loss multipliers.
pub fn poisson_weights(n: usize, rng: &mut DetRng) -> Vec<u64> {
    assert!(n >= 1, "poisson weights need at least one sample");
    (0..n).map(|_| rng.poisson1()).collect()
}

/// Index of the lowest member loss; ties break to the lowest index.
pub fn smcl_assignment(member_losses: &[f64]) -> usize {
    assert!(!member_losses.is_empty(), "smcl needs at least one member");
    let mut best = 0;
    for (i, &loss) in member_losses.iter().enumerate().skip(1) {
        if loss < member_losses[best] {
            best = i;
        }
    }
    best
}

fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    DetRng::derived(seed, &[rng::tag::SHUFFLE, epoch as u64]).shuffle(&mut order);
    order
}

fn member_epoch_order(base: &[usize], seed: u64, epoch: usize, member: usize) -> Vec<usize> {
    let mut order = base.to_vec();
    DetRng::derived(seed, &[rng::tag::SHUFFLE, epoch as u64, member as u64]).shuffle(&mut order);
    order
}

fn gather<'a>(rows: &'a [Vec<f64>], indices: &[usize]) -> Vec<&'a [f64]> {
    indices.iter().map(|&i| rows[i].as_slice()).collect()
}

fn validate(method: &MethodSpec, config: &TrainConfig, data: &Dataset) -> Result<()> {
    data.validate().map_err(|e| Error::config(e.to_string()))?;
    if config.members == 0 {
        return Err(Error::config("ensemble needs at least one member"));
    }
    if config.batch_size == 0 {
        return Err(Error::config("batch size must be positive"));
    }
    let dims = &config.template.layer_dims;
    if dims.len() < 2 {
        return Err(Error::config("network template needs input and output dims"));
    }
    if dims[0] != data.feature_dim() {
        return Err(Error::config(format!(
            "network input dim {} does not match feature dim {}",
            dims[0],
            data.feature_dim()
        )));
    }
    let c = config.loss.output_dim();
    if *dims.last().unwrap() != c {
        return Err(Error::config(format!(
            "network output dim {} does not match loss C = {c}",
            dims.last().unwrap()
        )));
    }
    if data.class_count != c {
        return Err(Error::config(format!(
            "dataset label width {} does not match loss C = {c}",
            data.class_count
        )));
    }
    match method {
        MethodSpec::Gncl { lambda } => {
            if !(0.0..=1.0).contains(lambda) {
                return Err(Error::config(format!(
                    "gncl lambda must lie in [0, 1], got {lambda}"
                )));
            }
        }
        MethodSpec::Gncl2 { lambda } => {
            if !(*lambda >= 0.0 && lambda.is_finite()) {
                return Err(Error::config(format!(
                    "gncl2 lambda must be a finite nonnegative real, got {lambda}"
                )));
            }
        }
        MethodSpec::Snapshot { snapshot_epochs } => {
            for pair in snapshot_epochs.windows(2) {
                if pair[1] <= pair[0] {
                    return Err(Error::config("snapshot epochs must be strictly increasing"));
                }
            }
            if let Some(&last) = snapshot_epochs.last() {
                if last >= config.epochs {
                    return Err(Error::config(format!(
                        "snapshot epoch {last} is not before total epochs {}",
                        config.epochs
                    )));
                }
            }
            let derived = snapshot_epochs.len() + 1;
            if config.members != derived {
                return Err(Error::config(format!(
                    "snapshot ensemble size is {derived} (schedule + final); config says {}",
                    config.members
                )));
            }
        }
        _ => {}
    }
    Ok(())
}

/// Trains an ensemble with the given method. Deterministic for a fixed seed.
pub fn train(method: &MethodSpec, config: &TrainConfig, data: &Dataset) -> Result<Ensemble> {
    train_with_observer(method, config, data, &mut |_, _, _| {})
}

/// As [`train`], invoking `observer(epoch, members, stat)` after every epoch
/// with the members that currently make up the effective ensemble.
pub fn train_with_observer<F>(
    method: &MethodSpec,
    config: &TrainConfig,
    data: &Dataset,
    observer: &mut F,
) -> Result<Ensemble>
where
    F: FnMut(usize, &[DenseNet], &EpochStat),
{
    validate(method, config, data)?;
    match method {
        MethodSpec::Gncl { .. } | MethodSpec::Gncl2 { .. } | MethodSpec::Smcl => {
            train_coupled(method, config, data, observer)
        }
        MethodSpec::Bagging | MethodSpec::Wagging { .. } => {
            train_resampled(method, config, data, observer)
        }
        MethodSpec::Snapshot { snapshot_epochs } => {
            snapshot_collect_observed(config, snapshot_epochs, data, observer)
        }
        MethodSpec::GradBoost => train_boosted(config, data, observer),
    }
}

/// Methods that need every member's output per batch before stepping.
/// Gradients accumulate in member order behind a per-batch barrier.
fn train_coupled<F>(
    method: &MethodSpec,
    config: &TrainConfig,
    data: &Dataset,
    observer: &mut F,
) -> Result<Ensemble>
where
    F: FnMut(usize, &[DenseNet], &EpochStat),
{
    let m = config.members;
    let mut members: Vec<DenseNet> = (0..m)
        .map(|i| config.template.build(rng::derive(config.seed, &[rng::tag::INIT, i as u64])))
        .collect::<Result<_>>()?;
    let mut opts: Vec<OptimizerState> = members
        .iter()
        .map(|net| OptimizerState::new(config.optimizer, net))
        .collect();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let order = epoch_order(data.len(), config.seed, epoch);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let xs = gather(&data.features, chunk);
            let ys = gather(&data.labels, chunk);
            let (loss, grads, updated) = match method {
                MethodSpec::Gncl { lambda } => {
                    let (loss, grads) = gncl_batch_loss(&members, &xs, &ys, *lambda, &config.loss)?;
                    (loss, grads, vec![true; m])
                }
                MethodSpec::Gncl2 { lambda } => {
                    let (loss, grads) =
                        gncl2_batch_loss(&members, &xs, &ys, *lambda, &config.loss)?;
                    (loss, grads, vec![true; m])
                }
                MethodSpec::Smcl => smcl_batch(&members, &xs, &ys, &config.loss)?,
                _ => unreachable!("dispatched above"),
            };
            loss_sum += loss;
            batches += 1;
            for i in 0..m {
                // Members that won no sample stay bit-unchanged.
                if updated[i] {
                    opts[i].apply_update(&mut members[i], &grads[i], epoch, &config.schedule)?;
                }
            }
        }
        let stat = EpochStat {
            objective_loss: loss_sum / batches as f64,
            ensemble_loss: ensemble_dataset_loss(&members, data, &config.loss)?,
        };
        observer(epoch, &members, &stat);
        history.push(stat);
    }
    Ok(Ensemble {
        members,
        method: method.clone(),
        config: config.clone(),
        history,
    })
}

/// Per-sample winner-take-all batch: only the member with the smallest loss
/// on a sample receives its gradient.
fn smcl_batch(
    members: &[DenseNet],
    xs: &[&[f64]],
    ys: &[&[f64]],
    kind: &LossKind,
) -> Result<(f64, Vec<ParamGrads>, Vec<bool>)> {
    let m = members.len();
    let batch = xs.len() as f64;
    let mut grads: Vec<ParamGrads> = members.iter().map(ParamGrads::zeros_like).collect();
    let mut updated = vec![false; m];
    let mut loss_sum = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        let traces: Vec<Trace> = members
            .iter()
            .map(|net| net.forward_trace(x))
            .collect::<Result<_>>()?;
        let losses: Vec<f64> = traces
            .iter()
            .map(|t| loss_value(kind, t.output(), y))
            .collect::<Result<_>>()?;
        let winner = smcl_assignment(&losses);
        loss_sum += losses[winner];
        let upstream = loss_gradient(kind, traces[winner].output(), y)?;
        members[winner].backward_from_trace(&traces[winner], &upstream, &mut grads[winner])?;
        updated[winner] = true;
    }
    for g in &mut grads {
        g.scale(1.0 / batch);
    }
    Ok((loss_sum / batch, grads, updated))
}

/// Bagging (per-member bootstrap multisets) and wagging (per-member Poisson
/// sample weights): members train independently but epoch-synchronously so
/// per-epoch ensemble statistics are well defined.
fn train_resampled<F>(
    method: &MethodSpec,
    config: &TrainConfig,
    data: &Dataset,
    observer: &mut F,
) -> Result<Ensemble>
where
    F: FnMut(usize, &[DenseNet], &EpochStat),
{
    let m = config.members;
    let n = data.len();
    let mut members: Vec<DenseNet> = (0..m)
        .map(|i| config.template.build(rng::derive(config.seed, &[rng::tag::INIT, i as u64])))
        .collect::<Result<_>>()?;
    let mut opts: Vec<OptimizerState> = members
        .iter()
        .map(|net| OptimizerState::new(config.optimizer, net))
        .collect();

    // One draw per member, reused across epochs.
    let (indices, weights): (Vec<Vec<usize>>, Vec<Vec<f64>>) = match method {
        MethodSpec::Bagging => {
            let indices: Vec<Vec<usize>> = (0..m)
                .map(|i| {
                    let mut rng =
                        DetRng::derived(config.seed, &[rng::tag::BOOTSTRAP, i as u64]);
                    bootstrap_sample(n, &mut rng)
                })
                .collect();
            (indices, vec![vec![1.0; n]; m])
        }
        MethodSpec::Wagging { .. } => {
            let weights: Vec<Vec<f64>> = (0..m)
                .map(|i| {
                    let mut rng = DetRng::derived(config.seed, &[rng::tag::POISSON, i as u64]);
                    poisson_weights(n, &mut rng)
                        .into_iter()
                        .map(|w| w as f64)
                        .collect()
                })
                .collect();
            (vec![(0..n).collect(); m], weights)
        }
        _ => unreachable!("dispatched above"),
    };

    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut objective_sum = 0.0;
        for i in 0..m {
            let order = member_epoch_order(&indices[i], config.seed, epoch, i);
            let mut loss_sum = 0.0;
            let mut batches = 0usize;
            for chunk in order.chunks(config.batch_size) {
                let mut grads = ParamGrads::zeros_like(&members[i]);
                let mut batch_loss = 0.0;
                for &j in chunk {
                    let trace = members[i].forward_trace(&data.features[j])?;
                    let w = weights[i][j];
                    batch_loss += w * loss_value(&config.loss, trace.output(), &data.labels[j])?;
                    let grad = loss_gradient(&config.loss, trace.output(), &data.labels[j])?;
                    let upstream: Vec<f64> = grad.iter().map(|g| w * g).collect();
                    members[i].backward_from_trace(&trace, &upstream, &mut grads)?;
                }
                grads.scale(1.0 / chunk.len() as f64);
                opts[i].apply_update(&mut members[i], &grads, epoch, &config.schedule)?;
                loss_sum += batch_loss / chunk.len() as f64;
                batches += 1;
            }
            objective_sum += loss_sum / batches as f64;
        }
        let stat = EpochStat {
            objective_loss: objective_sum / m as f64,
            ensemble_loss: ensemble_dataset_loss(&members, data, &config.loss)?,
        };
        observer(epoch, &members, &stat);
        history.push(stat);
    }
    Ok(Ensemble {
        members,
        method: method.clone(),
        config: config.clone(),
        history,
    })
}

/// Trains one model, deep-copying its parameters at the start of each listed
/// epoch and appending the final model: ensemble size = schedule length + 1.
pub fn snapshot_collect(
    config: &TrainConfig,
    snapshot_epochs: &[usize],
    data: &Dataset,
) -> Result<Ensemble> {
    let method = MethodSpec::Snapshot {
        snapshot_epochs: snapshot_epochs.to_vec(),
    };
    validate(&method, config, data)?;
    snapshot_collect_observed(config, snapshot_epochs, data, &mut |_, _, _| {})
}

fn snapshot_collect_observed<F>(
    config: &TrainConfig,
    snapshot_epochs: &[usize],
    data: &Dataset,
    observer: &mut F,
) -> Result<Ensemble>
where
    F: FnMut(usize, &[DenseNet], &EpochStat),
{
    let mut model = config
        .template
        .build(rng::derive(config.seed, &[rng::tag::INIT, 0]))?;
    let mut opt = OptimizerState::new(config.optimizer, &model);
    let mut snapshots: Vec<DenseNet> = Vec::with_capacity(snapshot_epochs.len() + 1);
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        if snapshot_epochs.contains(&epoch) {
            snapshots.push(model.clone());
        }
        let order = epoch_order(data.len(), config.seed, epoch);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let xs = gather(&data.features, chunk);
            let ys = gather(&data.labels, chunk);
            // Single-model step: identical bytes to gncl with M = 1.
            let (loss, grads) =
                gncl_batch_loss(std::slice::from_ref(&model), &xs, &ys, 0.0, &config.loss)?;
            opt.apply_update(&mut model, &grads[0], epoch, &config.schedule)?;
            loss_sum += loss;
            batches += 1;
        }
        let stat = EpochStat {
            objective_loss: loss_sum / batches as f64,
            ensemble_loss: ensemble_dataset_loss(
                std::slice::from_ref(&model),
                data,
                &config.loss,
            )?,
        };
        let mut current: Vec<DenseNet> = snapshots.clone();
        current.push(model.clone());
        observer(epoch, &current, &stat);
        history.push(stat);
    }
    snapshots.push(model);
    Ok(Ensemble {
        members: snapshots,
        method: MethodSpec::Snapshot {
            snapshot_epochs: snapshot_epochs.to_vec(),
        },
        config: config.clone(),
        history,
    })
}

/// Trains one boosting stage: a fresh member fitted to the running-average
/// ensemble loss with the prefix frozen. Stage indices are 1-based.
pub fn boosting_stage(
    frozen_prefix: &[DenseNet],
    stage_index: usize,
    config: &TrainConfig,
    data: &Dataset,
) -> Result<DenseNet> {
    if stage_index != frozen_prefix.len() + 1 {
        return Err(Error::config(format!(
            "stage index {stage_index} does not match prefix length {}",
            frozen_prefix.len()
        )));
    }
    let c = config.loss.output_dim();
    let mut prefix_sums = vec![vec![0.0; c]; data.len()];
    for (j, x) in data.features.iter().enumerate() {
        for net in frozen_prefix {
            let out = net.forward(x)?;
            for (p, o) in prefix_sums[j].iter_mut().zip(&out) {
                *p += o;
            }
        }
    }
    boost_stage_inner(config, data, &prefix_sums, stage_index, &mut 0, &mut |_, _, _| {})
        .map(|(model, _)| model)
}

fn boost_stage_inner<F>(
    config: &TrainConfig,
    data: &Dataset,
    prefix_sums: &[Vec<f64>],
    stage: usize,
    global_epoch: &mut usize,
    observer_with_members: &mut F,
) -> Result<(DenseNet, Vec<EpochStat>)>
where
    F: FnMut(usize, &DenseNet, &EpochStat),
{
    let mut model = config
        .template
        .build(rng::derive(config.seed, &[rng::tag::INIT, (stage - 1) as u64]))?;
    let mut opt = OptimizerState::new(config.optimizer, &model);
    let mut stats = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let order = epoch_order(data.len(), config.seed, epoch);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let xs = gather(&data.features, chunk);
            let ys = gather(&data.labels, chunk);
            let prefixes: Vec<&[f64]> = chunk.iter().map(|&j| prefix_sums[j].as_slice()).collect();
            let (loss, grads) =
                boost_batch_loss(&model, &prefixes, stage, &xs, &ys, &config.loss)?;
            opt.apply_update(&mut model, &grads, epoch, &config.schedule)?;
            loss_sum += loss;
            batches += 1;
        }
        // The stage objective is the running ensemble's training loss.
        let mut full_loss = 0.0;
        for (j, (x, y)) in data.features.iter().zip(&data.labels).enumerate() {
            let out = model.forward(x)?;
            let avg: Vec<f64> = prefix_sums[j]
                .iter()
                .zip(&out)
                .map(|(p, o)| (p + o) / stage as f64)
                .collect();
            full_loss += loss_value(&config.loss, &avg, y)?;
        }
        full_loss /= data.len() as f64;
        let stat = EpochStat {
            objective_loss: loss_sum / batches as f64,
            ensemble_loss: full_loss,
        };
        observer_with_members(*global_epoch, &model, &stat);
        stats.push(stat);
        *global_epoch += 1;
    }
    Ok((model, stats))
}

fn train_boosted<F>(config: &TrainConfig, data: &Dataset, observer: &mut F) -> Result<Ensemble>
where
    F: FnMut(usize, &[DenseNet], &EpochStat),
{
    let c = config.loss.output_dim();
    let mut members: Vec<DenseNet> = Vec::with_capacity(config.members);
    let mut prefix_sums = vec![vec![0.0; c]; data.len()];
    let mut history = Vec::new();
    let mut global_epoch = 0usize;
    for stage in 1..=config.members {
        let (model, stats) = {
            let frozen = members.clone();
            boost_stage_inner(
                config,
                data,
                &prefix_sums,
                stage,
                &mut global_epoch,
                &mut |epoch, current, stat| {
                    let mut all = frozen.clone();
                    all.push(current.clone());
                    observer(epoch, &all, stat);
                },
            )?
        };
        for (j, x) in data.features.iter().enumerate() {
            let out = model.forward(x)?;
            for (p, o) in prefix_sums[j].iter_mut().zip(&out) {
                *p += o;
            }
        }
        members.push(model);
        history.extend(stats);
    }
    Ok(Ensemble {
        members,
        method: MethodSpec::GradBoost,
        config: config.clone(),
        history,
    })
}
