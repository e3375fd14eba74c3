//! Acceptance suite: one test per criterion, each printing a pass/fail line
//! with the measured values (visible under `--nocapture`).
//!
//! Every tolerance is pinned here in code. The capacity-interaction check
//! (criterion 10) is a soft check by design: a failed majority writes a
//! warning artifact instead of failing the suite.

use std::path::PathBuf;
use std::process::Command;
use std::time::Instant;

use gncl::bound::Bound;
use gncl::data::{gen_spirals, train_test_split, Dataset};
use gncl::decomposition::{decompose_sample, remainder_bound, ensemble_mean};
use gncl::harness::{
    run_experiment, DatasetSpec, EpochColumn, ExperimentConfig, MetricsRow, NetSpec, TrainSpec,
};
use gncl::losses::{
    ce_third_derivative_max, loss_gradient, loss_hessian, loss_value, LossKind, LossTag,
    CE_THIRD_DERIV_QUOTED_BOUND,
};
use gncl::network::{
    gradient_check, Activation, DenseNet, LrSchedule, OptimizerConfig, ParamGrads,
};
use gncl::rng::DetRng;
use gncl::training::{
    gncl_batch_loss, gncl2_batch_loss, poisson_weights, train, MethodSpec, NetTemplate,
    TrainConfig, PROTOCOL_SNAPSHOT_EPOCHS,
};

fn close(a: f64, b: f64, rel: f64, abs: f64) -> bool {
    (a - b).abs() <= abs + rel * a.abs().max(b.abs())
}

/// Criterion 1: the decomposition is exact (zero remainder) for the MSE on
/// 500 seeded random ensembles with M in {1, 2, 4, 16}.
#[test]
fn c01_mse_exactness() {
    let start = Instant::now();
    let kind = LossKind::mse();
    let mut rng = DetRng::from_seed(0xC1);
    let mut worst: f64 = 0.0;
    for trial in 0..500 {
        let m = [1usize, 2, 4, 16][trial % 4];
        let outputs: Vec<Vec<f64>> = (0..m).map(|_| vec![rng.range_f64(-5.0, 5.0)]).collect();
        let y = vec![rng.range_f64(-5.0, 5.0)];
        let row = decompose_sample(&outputs, &y, &kind).unwrap();
        worst = worst.max(row.empirical_remainder.abs());
        assert!(
            row.empirical_remainder.abs() <= 1e-10,
            "trial {trial}: |remainder| = {}",
            row.empirical_remainder.abs()
        );
    }
    println!(
        "[PASS] C1 mse exactness: max |remainder| = {worst:.3e} <= 1e-10 over 500 ensembles ({:?})",
        start.elapsed()
    );
}

/// Criterion 2: the exponential-loss remainder bound on members in [-1, 1]
/// is (1/6) e (max dev)^3, at most 0.454, and 0.45304 +- 1e-5 at max dev 1.
#[test]
fn c02_exponential_remainder_constant() {
    let start = Instant::now();
    let kind = LossKind::exponential();
    let mut rng = DetRng::from_seed(0xC2);
    for trial in 0..200 {
        let m = 2 + trial % 6;
        let outputs: Vec<Vec<f64>> = (0..m).map(|_| vec![rng.range_f64(-1.0, 1.0)]).collect();
        let f = ensemble_mean(&outputs).unwrap();
        let max_dev = outputs
            .iter()
            .map(|o| (o[0] - f[0]).abs())
            .fold(0.0f64, f64::max);
        let expected = std::f64::consts::E / 6.0 * max_dev.powi(3);
        match remainder_bound(&kind, &outputs, &f) {
            Bound::Finite(b) => {
                assert!(
                    (b - expected).abs() <= 1e-12,
                    "trial {trial}: bound {b} vs closed form {expected}"
                );
                // The 0.454 figure describes deviations of at most 1 around
                // the mean (always the case for member pairs).
                if max_dev <= 1.0 {
                    assert!(b <= 0.454, "trial {trial}: bound {b} > 0.454");
                }
            }
            Bound::Infinite => panic!("trial {trial}: bound must be finite"),
        }
    }
    // Member pairs in [-1, 1] always deviate by at most 1 from their mean.
    for trial in 0..200 {
        let outputs = vec![
            vec![rng.range_f64(-1.0, 1.0)],
            vec![rng.range_f64(-1.0, 1.0)],
        ];
        let f = ensemble_mean(&outputs).unwrap();
        let b = remainder_bound(&kind, &outputs, &f).finite().unwrap();
        assert!(b <= 0.454, "pair trial {trial}: bound {b} > 0.454");
    }
    // Max deviation exactly 1: members at -1 and +1 around the mean 0.
    let outputs_unit = vec![vec![-1.0], vec![1.0]];
    let f_unit = ensemble_mean(&outputs_unit).unwrap();
    let bound = remainder_bound(&kind, &outputs_unit, &f_unit)
        .finite()
        .unwrap();
    assert!((bound - 0.45304).abs() <= 1e-5, "bound {bound}");
    println!(
        "[PASS] C2 exponential remainder: bound(max dev = 1) = {bound:.7} in 0.45304 +- 1e-5 ({:?})",
        start.elapsed()
    );
}

/// Independent re-derivation of the cross-entropy third partial for the
/// brute-force oracle (kept separate from the library implementation).
fn oracle_ce_third(q: &[f64; 3], i: usize, j: usize, k: usize) -> f64 {
    let e = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
    e(i, j) * q[i] * (e(i, k) - q[k])
        - q[i] * q[j] * (e(i, k) - q[k])
        - q[i] * q[j] * (e(j, k) - q[k])
}

/// Criterion 3: brute-force simplex maximization of the cross-entropy third
/// partials gives about 0.0962 (attained at i = j = k), exceeding the quoted
/// 0.038 bound for the pairwise-distinct pattern.
#[test]
fn c03_ce_bound_discrepancy() {
    let start = Instant::now();
    let step = 1e-3;
    let n = (1.0 / step) as usize;
    let mut grid_max = 0.0f64;
    let mut diag_max = 0.0f64; // i = j = k pattern only
    for a in 1..n {
        let qa = a as f64 * step;
        for b in 1..(n - a) {
            let qb = b as f64 * step;
            let qc = 1.0 - qa - qb;
            if qc <= 0.0 {
                continue;
            }
            let q = [qa, qb, qc];
            for i in 0..3 {
                for j in 0..3 {
                    for k in 0..3 {
                        let v = oracle_ce_third(&q, i, j, k).abs();
                        grid_max = grid_max.max(v);
                        if i == j && j == k {
                            diag_max = diag_max.max(v);
                        }
                    }
                }
            }
        }
    }
    assert!(
        (grid_max - 0.0962).abs() <= 0.002,
        "grid max {grid_max} not within 0.0962 +- 0.002"
    );
    assert!(
        diag_max > CE_THIRD_DERIV_QUOTED_BOUND,
        "i=j=k pattern max {diag_max} does not exceed the quoted bound {CE_THIRD_DERIV_QUOTED_BOUND}"
    );
    let lib_max = ce_third_derivative_max();
    assert!(
        (lib_max - grid_max).abs() <= 1e-3,
        "library constant {lib_max} vs grid {grid_max}"
    );
    println!(
        "[PASS] C3 ce bound discrepancy: grid max {grid_max:.5} (i=j=k {diag_max:.5}) > quoted {CE_THIRD_DERIV_QUOTED_BOUND}; library {lib_max:.5} ({:?})",
        start.elapsed()
    );
}

fn random_point(kind: &LossKind, rng: &mut DetRng) -> (Vec<f64>, Vec<f64>) {
    let c = kind.output_dim();
    match kind.tag() {
        LossTag::Mse => (
            vec![rng.range_f64(-3.0, 3.0)],
            vec![rng.range_f64(-3.0, 3.0)],
        ),
        LossTag::Nll => {
            let z: Vec<f64> = (0..c).map(|_| rng.range_f64(0.05, 1.0)).collect();
            let mut y = vec![0.0; c];
            y[rng.u64_below(c as u64) as usize] = 1.0;
            (z, y)
        }
        LossTag::CrossEntropySoftmax => {
            let z: Vec<f64> = (0..c).map(|_| rng.range_f64(-3.0, 3.0)).collect();
            let mut y = vec![0.0; c];
            y[rng.u64_below(c as u64) as usize] = 1.0;
            (z, y)
        }
        LossTag::Exponential | LossTag::GaussianHinge => {
            let y = if rng.f64_unit() < 0.5 { 1.0 } else { -1.0 };
            (vec![rng.range_f64(-2.0, 2.0)], vec![y])
        }
    }
}

fn all_kinds() -> Vec<LossKind> {
    vec![
        LossKind::mse(),
        LossKind::nll(4).unwrap(),
        LossKind::cross_entropy(4).unwrap(),
        LossKind::exponential(),
        LossKind::gaussian_hinge(),
    ]
}

/// Criterion 4: every loss kind passes central finite-difference checks of
/// the gradient (1e-6 relative) and Hessian (1e-5 relative) on 200 seeded
/// points each.
#[test]
fn c04_derivative_oracles() {
    let start = Instant::now();
    let h = 1e-5;
    for kind in all_kinds() {
        let mut rng = DetRng::from_seed(0xC4 + kind.output_dim() as u64);
        for _ in 0..200 {
            let (z, y) = random_point(&kind, &mut rng);
            let g = loss_gradient(&kind, &z, &y).unwrap();
            let hess = loss_hessian(&kind, &z, &y).unwrap();
            for i in 0..z.len() {
                let mut zp = z.clone();
                let mut zm = z.clone();
                zp[i] += h;
                zm[i] -= h;
                let fd = (loss_value(&kind, &zp, &y).unwrap()
                    - loss_value(&kind, &zm, &y).unwrap())
                    / (2.0 * h);
                assert!(
                    close(g[i], fd, 1e-6, 1e-8),
                    "{} gradient[{i}]: {} vs fd {}",
                    kind.tag(),
                    g[i],
                    fd
                );
                let gp = loss_gradient(&kind, &zp, &y).unwrap();
                let gm = loss_gradient(&kind, &zm, &y).unwrap();
                for r in 0..z.len() {
                    let fd = (gp[r] - gm[r]) / (2.0 * h);
                    assert!(
                        close(hess[r][i], fd, 1e-5, 1e-7),
                        "{} hessian[{r}][{i}]: {} vs fd {}",
                        kind.tag(),
                        hess[r][i],
                        fd
                    );
                }
            }
        }
    }
    println!(
        "[PASS] C4 derivative oracles: 5 kinds x 200 points, gradient 1e-6 rel, hessian 1e-5 rel ({:?})",
        start.elapsed()
    );
}

/// Criterion 5: the ensemble never does worse than the average member for
/// the convex kinds, on 500 random ensembles each.
#[test]
fn c05_jensen_bound() {
    let start = Instant::now();
    let kinds = vec![
        LossKind::mse(),
        LossKind::cross_entropy(3).unwrap(),
        LossKind::exponential(),
        LossKind::nll(3).unwrap(),
    ];
    for kind in kinds {
        let mut rng = DetRng::from_seed(0xC5 + kind.output_dim() as u64);
        for trial in 0..500 {
            let m = [1usize, 2, 4, 16][trial % 4];
            let c = kind.output_dim();
            let outputs: Vec<Vec<f64>> = (0..m)
                .map(|_| {
                    (0..c)
                        .map(|_| match kind.tag() {
                            LossTag::Nll => rng.range_f64(0.05, 1.0),
                            _ => rng.range_f64(-3.0, 3.0),
                        })
                        .collect()
                })
                .collect();
            let y = match kind.tag() {
                LossTag::Mse => vec![rng.range_f64(-3.0, 3.0)],
                LossTag::Exponential => vec![if rng.f64_unit() < 0.5 { 1.0 } else { -1.0 }],
                _ => {
                    let mut y = vec![0.0; c];
                    y[rng.u64_below(c as u64) as usize] = 1.0;
                    y
                }
            };
            let row = decompose_sample(&outputs, &y, &kind).unwrap();
            assert!(
                row.ensemble_loss <= row.avg_member_loss + 1e-10,
                "{} trial {trial}: ensemble {} > avg {}",
                kind.tag(),
                row.ensemble_loss,
                row.avg_member_loss
            );
        }
    }
    println!(
        "[PASS] C5 jensen: ensemble <= average member + 1e-10 for mse/ce/exponential/nll x 500 ({:?})",
        start.elapsed()
    );
}

fn grads_close(a: &[ParamGrads], b: &[ParamGrads], tol: f64) -> Result<(), String> {
    for (i, (ga, gb)) in a.iter().zip(b).enumerate() {
        for (la, lb) in ga.weights.iter().zip(&gb.weights) {
            for (x, y) in la.iter().zip(lb) {
                if (x - y).abs() > tol * (1.0 + x.abs().max(y.abs())) {
                    return Err(format!("member {i}: weight grad {x} vs {y}"));
                }
            }
        }
        for (la, lb) in ga.biases.iter().zip(&gb.biases) {
            for (x, y) in la.iter().zip(lb) {
                if (x - y).abs() > tol * (1.0 + x.abs().max(y.abs())) {
                    return Err(format!("member {i}: bias grad {x} vs {y}"));
                }
            }
        }
    }
    Ok(())
}

/// Criterion 6: the blended objective's gradients match independent
/// per-member training at lambda 0 and end-to-end ensemble-loss training at
/// lambda 1, to 1e-12, on 50 seeded member/batch draws.
#[test]
fn c06_lambda_extremes() {
    let start = Instant::now();
    for draw in 0..50u64 {
        let kind = if draw % 2 == 0 {
            LossKind::cross_entropy(3).unwrap()
        } else {
            LossKind::mse()
        };
        let c = kind.output_dim();
        let m = 2 + (draw as usize) % 3;
        let members: Vec<DenseNet> = (0..m)
            .map(|i| DenseNet::init(1000 + draw * 8 + i as u64, &[3, 5, c], false).unwrap())
            .collect();
        let mut rng = DetRng::from_seed(0xC6 + draw);
        let batch = 1 + (draw as usize) % 4;
        let xs_owned: Vec<Vec<f64>> = (0..batch)
            .map(|_| (0..3).map(|_| rng.range_f64(-1.0, 1.0)).collect())
            .collect();
        let ys_owned: Vec<Vec<f64>> = (0..batch)
            .map(|_| match kind.tag() {
                LossTag::Mse => vec![rng.range_f64(-1.0, 1.0)],
                _ => {
                    let mut y = vec![0.0; c];
                    y[rng.u64_below(c as u64) as usize] = 1.0;
                    y
                }
            })
            .collect();
        let xs: Vec<&[f64]> = xs_owned.iter().map(Vec::as_slice).collect();
        let ys: Vec<&[f64]> = ys_owned.iter().map(Vec::as_slice).collect();

        // Independent oracle: each member sees only its own loss, scaled by
        // the 1/M weight of the averaged objective.
        let mf = m as f64;
        let bf = batch as f64;
        let mut independent: Vec<ParamGrads> =
            members.iter().map(ParamGrads::zeros_like).collect();
        for (x, y) in xs.iter().zip(&ys) {
            for (i, net) in members.iter().enumerate() {
                let out = net.forward(x).unwrap();
                let g = loss_gradient(&kind, &out, y).unwrap();
                let upstream: Vec<f64> = g.iter().map(|v| v / mf).collect();
                independent[i].add_assign(&net.backward(x, &upstream).unwrap());
            }
        }
        for g in &mut independent {
            g.scale(1.0 / bf);
        }

        // End-to-end oracle: gradients of the ensemble-mean loss.
        let mut e2e: Vec<ParamGrads> = members.iter().map(ParamGrads::zeros_like).collect();
        for (x, y) in xs.iter().zip(&ys) {
            let outputs: Vec<Vec<f64>> =
                members.iter().map(|net| net.forward(x).unwrap()).collect();
            let f = ensemble_mean(&outputs).unwrap();
            let gf = loss_gradient(&kind, &f, y).unwrap();
            let upstream: Vec<f64> = gf.iter().map(|v| v / mf).collect();
            for (i, net) in members.iter().enumerate() {
                e2e[i].add_assign(&net.backward(x, &upstream).unwrap());
            }
        }
        for g in &mut e2e {
            g.scale(1.0 / bf);
        }

        let (_, at_zero) = gncl_batch_loss(&members, &xs, &ys, 0.0, &kind).unwrap();
        grads_close(&at_zero, &independent, 1e-12)
            .unwrap_or_else(|e| panic!("draw {draw} lambda=0: {e}"));
        let (_, at_one) = gncl_batch_loss(&members, &xs, &ys, 1.0, &kind).unwrap();
        grads_close(&at_one, &e2e, 1e-12)
            .unwrap_or_else(|e| panic!("draw {draw} lambda=1: {e}"));
    }
    println!(
        "[PASS] C6 lambda extremes: gradients match the independent and end-to-end oracles to 1e-12 on 50 draws ({:?})",
        start.elapsed()
    );
}

/// Criterion 7: for the MSE the explicit diversity-regularized objective
/// equals the classical negative-correlation objective to 1e-12 for
/// lambda in {0, 0.25, 0.5, 1} on 100 random inputs.
#[test]
fn c07_ncl_equivalence() {
    let start = Instant::now();
    let kind = LossKind::mse();
    for trial in 0..100u64 {
        let m = 2 + (trial as usize) % 4;
        let members: Vec<DenseNet> = (0..m)
            .map(|i| DenseNet::init(2000 + trial * 8 + i as u64, &[2, 4, 1], false).unwrap())
            .collect();
        let mut rng = DetRng::from_seed(0xC7 + trial);
        let x_owned: Vec<f64> = (0..2).map(|_| rng.range_f64(-1.0, 1.0)).collect();
        let y_owned = vec![rng.range_f64(-1.0, 1.0)];
        let xs: Vec<&[f64]> = vec![&x_owned];
        let ys: Vec<&[f64]> = vec![&y_owned];

        let outputs: Vec<f64> = members
            .iter()
            .map(|net| net.forward(&x_owned).unwrap()[0])
            .collect();
        let f: f64 = outputs.iter().sum::<f64>() / m as f64;
        let y = y_owned[0];
        for lambda in [0.0, 0.25, 0.5, 1.0] {
            let classical = outputs
                .iter()
                .map(|h| 0.5 * (h - y) * (h - y))
                .sum::<f64>()
                / m as f64
                - lambda
                    * (outputs.iter().map(|h| 0.5 * (h - f) * (h - f)).sum::<f64>() / m as f64);
            let (value, _) = gncl2_batch_loss(&members, &xs, &ys, lambda, &kind).unwrap();
            assert!(
                (value - classical).abs() <= 1e-12,
                "trial {trial} lambda {lambda}: {value} vs classical {classical}"
            );
        }
    }
    println!(
        "[PASS] C7 ncl equivalence: explicit objective equals the classical mse form to 1e-12 (100 inputs x 4 lambdas) ({:?})",
        start.elapsed()
    );
}

/// Criterion 8: the backward pass agrees with finite differences to 1e-5
/// relative for nets up to [8, 16, 16, 4] across all loss kinds.
#[test]
fn c08_backprop_oracle() {
    let start = Instant::now();
    for kind in all_kinds() {
        let c = kind.output_dim();
        for dims in [vec![4, 8, c], vec![8, 16, 16, c]] {
            let mut net = DenseNet::init(0xC8, &dims, false).unwrap();
            if kind.tag() == LossTag::Nll {
                // The negative-likelihood loss consumes positive scores;
                // shift the output biases so the net lives in its domain.
                for row in 0..c {
                    *net.bias_mut(dims.len() - 2, row) += 2.0;
                }
            }
            let report = gradient_check(&net, &kind, 1e-5).unwrap();
            assert!(
                report.passed,
                "{} dims {dims:?}: max rel err {}",
                kind.tag(),
                report.max_rel_err
            );
        }
    }
    println!(
        "[PASS] C8 backprop oracle: gradient_check < 1e-5 rel for all kinds up to [8,16,16,C] ({:?})",
        start.elapsed()
    );
}

fn sweep_config(net: NetSpec, train: TrainSpec, dataset: DatasetSpec, fraction: f64) -> ExperimentConfig {
    ExperimentConfig {
        seed: 42,
        dataset,
        test_fraction: fraction,
        normalize: false,
        net,
        train,
        methods: vec![MethodSpec::Gncl { lambda: 0.0 }],
        lambda_grid: (0..=10).map(|i| i as f64 / 10.0).collect(),
        repeats: 3,
        per_epoch: false,
        out_dir: None,
    }
}

fn adabelief(members: usize, epochs: usize, batch: usize, lr: f64, halve: usize) -> TrainSpec {
    TrainSpec {
        members,
        epochs,
        batch_size: batch,
        optimizer: "adabelief".into(),
        learning_rate: lr,
        halve_every: halve,
        ..TrainSpec::default()
    }
}

/// Criterion 9: on the spirals task (2 classes, 400 train / 200 test),
/// sweeping lambda over {0, 0.1, ..., 1.0} with M = 8 and 3 seeds, the
/// diversity on test data increases with lambda:
/// mean Spearman(lambda, diversity) >= 0.8.
#[test]
fn c09_desk_scale_trend() {
    let start = Instant::now();
    let dataset = DatasetSpec::Spirals {
        n_per_class: 300,
        classes: 2,
        noise: 0.08,
        seed: 1,
    };
    // Sanity on the pinned sizes.
    let full = gen_spirals(1, 300, 2, 0.08).unwrap();
    let (train_part, test_part) = train_test_split(&full, 1.0 / 3.0, 1).unwrap();
    assert_eq!((train_part.len(), test_part.len()), (400, 200));

    let config = sweep_config(
        NetSpec {
            hidden: vec![32],
            binarized: false,
            activation: "relu".into(),
        },
        adabelief(8, 60, 32, 0.01, 25),
        dataset,
        1.0 / 3.0,
    );
    let outcome = run_experiment(&config, 1).unwrap();
    assert!(outcome.failures.is_empty(), "{:?}", outcome.failures);
    let trend = outcome.trend.expect("lambda sweep has a trend");
    for seed_trend in &trend.per_seed {
        println!(
            "       seed {}: spearman(lambda, diversity) = {:.4}, spearman(lambda, member_acc) = {:.4}",
            seed_trend.seed,
            seed_trend.spearman_lambda_diversity,
            seed_trend.spearman_lambda_member_acc
        );
    }
    assert!(
        trend.mean_spearman_lambda_diversity >= 0.8,
        "mean spearman {}",
        trend.mean_spearman_lambda_diversity
    );
    println!(
        "[PASS] C9 desk-scale trend: mean spearman(lambda, diversity) = {:.4} >= 0.8 on one core in {:?}",
        trend.mean_spearman_lambda_diversity,
        start.elapsed()
    );
}

fn per_seed_rows(rows: &[MetricsRow]) -> Vec<(u64, Vec<&MetricsRow>)> {
    let mut seeds: Vec<u64> = rows.iter().map(|r| r.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    seeds
        .into_iter()
        .map(|seed| {
            (
                seed,
                rows.iter()
                    .filter(|r| r.seed == seed && r.epoch == EpochColumn::Final)
                    .collect(),
            )
        })
        .collect()
}

/// Lambdas attaining the best test accuracy for one seed.
fn best_lambdas(rows: &[&MetricsRow]) -> Vec<f64> {
    let best = rows
        .iter()
        .map(|r| r.test_acc_ensemble)
        .fold(f64::NEG_INFINITY, f64::max);
    rows.iter()
        .filter(|r| r.test_acc_ensemble == best)
        .filter_map(|r| r.lambda)
        .collect()
}

/// Criterion 10 (soft): with a wide net reaching near-zero train loss on
/// blobs the best accuracy is attained at some lambda < 1; with a binarized
/// narrow net on spirals the best lambda is >= 0.5. Majority over 3 seeds;
/// a failed majority produces a warning artifact, not a test failure.
#[test]
fn c10_capacity_interaction() {
    let start = Instant::now();
    let mut warnings: Vec<String> = Vec::new();

    // Wide net, easy data, overfit regime.
    let wide = sweep_config(
        NetSpec {
            hidden: vec![64],
            binarized: false,
            activation: "relu".into(),
        },
        adabelief(8, 60, 32, 0.01, 25),
        DatasetSpec::Blobs {
            n_per_class: 60,
            classes: 3,
            dims: 2,
            spread: 0.9,
            seed: 2,
        },
        0.25,
    );
    let outcome = run_experiment(&wide, 4).unwrap();
    assert!(outcome.failures.is_empty(), "{:?}", outcome.failures);
    let mut wide_votes = 0usize;
    let mut seeds_seen = 0usize;
    for (seed, rows) in per_seed_rows(&outcome.rows) {
        seeds_seen += 1;
        let min_loss = rows.iter().map(|r| r.train_loss).fold(f64::INFINITY, f64::min);
        if min_loss >= 0.1 {
            warnings.push(format!(
                "wide/blobs seed {seed}: train loss {min_loss:.4} is not near zero"
            ));
        }
        let best = best_lambdas(&rows);
        println!("       wide/blobs seed {seed}: best-lambda set {best:?} (min train loss {min_loss:.4})");
        if best.iter().any(|&l| l < 1.0) {
            wide_votes += 1;
        }
    }
    let wide_majority = wide_votes * 2 > seeds_seen;
    if !wide_majority {
        warnings.push(format!(
            "wide/blobs: best accuracy at lambda < 1 in only {wide_votes}/{seeds_seen} seeds"
        ));
    }

    // Binarized narrow net, hard data: coupling should help.
    let narrow = sweep_config(
        NetSpec {
            hidden: vec![8],
            binarized: true,
            activation: "relu".into(),
        },
        adabelief(8, 100, 64, 0.01, 40),
        DatasetSpec::Spirals {
            n_per_class: 300,
            classes: 2,
            noise: 0.08,
            seed: 1,
        },
        1.0 / 3.0,
    );
    let outcome = run_experiment(&narrow, 4).unwrap();
    assert!(outcome.failures.is_empty(), "{:?}", outcome.failures);
    let mut narrow_votes = 0usize;
    let mut narrow_seen = 0usize;
    for (seed, rows) in per_seed_rows(&outcome.rows) {
        narrow_seen += 1;
        let best = best_lambdas(&rows);
        println!("       binarized/spirals seed {seed}: best-lambda set {best:?}");
        if best.iter().any(|&l| l >= 0.5) {
            narrow_votes += 1;
        }
    }
    let narrow_majority = narrow_votes * 2 > narrow_seen;
    if !narrow_majority {
        warnings.push(format!(
            "binarized/spirals: best lambda >= 0.5 in only {narrow_votes}/{narrow_seen} seeds"
        ));
    }

    if warnings.is_empty() {
        println!(
            "[PASS] C10 capacity interaction: wide best-lambda < 1 ({wide_votes}/{seeds_seen}), binarized best-lambda >= 0.5 ({narrow_votes}/{narrow_seen}) ({:?})",
            start.elapsed()
        );
    } else {
        let artifact = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("capacity_warning.txt");
        std::fs::write(&artifact, warnings.join("\n")).unwrap();
        println!(
            "[WARN] C10 capacity interaction: soft check did not hold; details in {} ({:?})",
            artifact.display(),
            start.elapsed()
        );
        for w in &warnings {
            println!("       {w}");
        }
    }
}

/// Criterion 11: protocol fidelity. The snapshot schedule yields M = 16;
/// losing members in winner-take-all training stay bit-unchanged; Poisson(1)
/// weights are zero with frequency e^-1 +- 0.01 over 1e5 draws.
#[test]
fn c11_protocol_fidelity() {
    let start = Instant::now();

    // Snapshot schedule -> 16 members.
    let data = Dataset {
        features: (0..12).map(|i| vec![i as f64 / 12.0]).collect(),
        labels: (0..12).map(|i| vec![(i % 3) as f64 * 0.5]).collect(),
        class_count: 1,
        name: "ramp".into(),
    };
    let config = TrainConfig {
        members: 16,
        epochs: 100,
        batch_size: 6,
        seed: 11,
        optimizer: OptimizerConfig::default(),
        schedule: LrSchedule::new(0.01, 25).unwrap(),
        loss: LossKind::mse(),
        template: NetTemplate {
            layer_dims: vec![1, 1],
            binarized: false,
            activation: Activation::ReLU,
        },
    };
    let ensemble = train(
        &MethodSpec::Snapshot {
            snapshot_epochs: PROTOCOL_SNAPSHOT_EPOCHS.to_vec(),
        },
        &config,
        &data,
    )
    .unwrap();
    assert_eq!(ensemble.members.len(), 16);

    // Winner-take-all: zero features force exact ties, so member 0 wins
    // every sample and member 1 must stay bit-identical to its init.
    let duel = Dataset {
        features: vec![vec![0.0], vec![0.0]],
        labels: vec![vec![1.1], vec![0.9]],
        class_count: 1,
        name: "duel".into(),
    };
    let config = TrainConfig {
        members: 2,
        epochs: 3,
        batch_size: 2,
        seed: 13,
        optimizer: OptimizerConfig::default(),
        schedule: LrSchedule::new(0.05, 10).unwrap(),
        loss: LossKind::mse(),
        template: NetTemplate {
            layer_dims: vec![1, 1],
            binarized: false,
            activation: Activation::ReLU,
        },
    };
    let ensemble = train(&MethodSpec::Smcl, &config, &duel).unwrap();
    let loser = DenseNet::init(
        gncl::rng::derive(config.seed, &[gncl::rng::tag::INIT, 1]),
        &config.template.layer_dims,
        false,
    )
    .unwrap();
    assert_eq!(ensemble.members[1], loser);
    assert_ne!(
        ensemble.members[0],
        DenseNet::init(
            gncl::rng::derive(config.seed, &[gncl::rng::tag::INIT, 0]),
            &config.template.layer_dims,
            false,
        )
        .unwrap()
    );

    // Poisson(1) zero frequency over 1e5 draws.
    let mut rng = DetRng::from_seed(0xC11);
    let weights = poisson_weights(100_000, &mut rng);
    let zero_freq = weights.iter().filter(|&&w| w == 0).count() as f64 / weights.len() as f64;
    let expected = (-1.0f64).exp();
    assert!(
        (zero_freq - expected).abs() <= 0.01,
        "zero frequency {zero_freq} vs e^-1 {expected}"
    );
    println!(
        "[PASS] C11 protocol fidelity: snapshot M = 16; losers bit-unchanged; P(w=0) = {zero_freq:.4} in e^-1 +- 0.01 ({:?})",
        start.elapsed()
    );
}

/// Criterion 12: rerunning `sweep` with an identical config produces a
/// byte-identical metrics.csv at any worker count.
#[test]
fn c12_sweep_determinism() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("config.json");
    let config = serde_json::json!({
        "seed": 42,
        "dataset": {"kind": "blobs", "n_per_class": 8, "classes": 2, "dims": 2, "spread": 0.6, "seed": 3},
        "test_fraction": 0.25,
        "net": {"hidden": [4], "binarized": false, "activation": "relu"},
        "train": {"members": 2, "epochs": 2, "batch_size": 4},
        "methods": [{"method": "gncl", "lambda": 0.0}, {"method": "bagging"}],
        "lambda_grid": [0.0, 0.5, 1.0],
        "repeats": 2
    });
    std::fs::write(&config_path, serde_json::to_string_pretty(&config).unwrap()).unwrap();

    let run = |out: &str, workers: &str| -> Vec<u8> {
        let out_dir = dir.path().join(out);
        let status = Command::new(env!("CARGO_BIN_EXE_gncl"))
            .args([
                "sweep",
                "--config",
                config_path.to_str().unwrap(),
                "--out",
                out_dir.to_str().unwrap(),
                "--workers",
                workers,
            ])
            .status()
            .unwrap();
        assert!(status.success());
        std::fs::read(out_dir.join("metrics.csv")).unwrap()
    };
    let serial = run("w1", "1");
    let serial_again = run("w1b", "1");
    let parallel = run("w4", "4");
    assert_eq!(serial, serial_again, "rerun changed metrics.csv");
    assert_eq!(serial, parallel, "worker count changed metrics.csv");
    println!(
        "[PASS] C12 determinism: metrics.csv byte-identical across reruns and --workers 1 vs 4 ({:?})",
        start.elapsed()
    );
}
