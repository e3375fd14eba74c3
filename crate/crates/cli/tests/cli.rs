//! End-to-end checks of the binary: subcommands, file outputs, the seed
//! environment override and error exits.

use std::path::Path;
use std::process::Command;

fn write_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("config.json");
    let config = serde_json::json!({
        "seed": 42,
        "dataset": {"kind": "blobs", "n_per_class": 10, "classes": 2, "dims": 2, "spread": 0.5, "seed": 3},
        "test_fraction": 0.25,
        "net": {"hidden": [4], "binarized": false, "activation": "relu"},
        "train": {"members": 2, "epochs": 3, "batch_size": 4},
        "methods": [{"method": "gncl", "lambda": 0.5}]
    });
    std::fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    path
}

fn gncl() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gncl"))
}

#[test]
fn train_then_decompose_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let out = dir.path().join("run");
    let output = gncl()
        .args([
            "train",
            "--config",
            config.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(output.status.success(), "{output:?}");
    assert!(out.join("metrics.csv").exists());
    assert!(out.join("manifest.json").exists());
    let member0 = out.join("member_00.bin");
    let member1 = out.join("member_01.bin");
    assert!(member0.exists() && member1.exists());

    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("method,lambda,seed,epoch,train_loss"));
    assert!(metrics.contains("gncl,0.5,42,final"));

    let decomposed = gncl()
        .args([
            "decompose",
            "--config",
            config.to_str().unwrap(),
            "--checkpoint",
            member0.to_str().unwrap(),
            "--checkpoint",
            member1.to_str().unwrap(),
            "--split",
            "test",
            "--per-sample",
            "--out",
            out.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(decomposed.status.success(), "{decomposed:?}");
    let stdout = String::from_utf8(decomposed.stdout).unwrap();
    assert!(stdout.contains("identity residual"), "{stdout}");
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    for key in [
        "ensemble_loss",
        "avg_member_loss",
        "diversity",
        "empirical_remainder",
        "remainder_bound",
        "per_sample",
    ] {
        assert!(report.get(key).is_some(), "missing {key}");
    }
    // The identity closes on the emitted aggregates.
    let residual = (report["ensemble_loss"].as_f64().unwrap()
        - (report["avg_member_loss"].as_f64().unwrap() - report["diversity"].as_f64().unwrap()
            + report["empirical_remainder"].as_f64().unwrap()))
    .abs();
    assert!(residual <= 1e-12, "residual {residual}");
}

#[test]
fn env_seed_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let out = dir.path().join("seeded");
    let output = gncl()
        .env("GNCL_SEED", "777")
        .args([
            "train",
            "--config",
            config.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(output.status.success(), "{output:?}");
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(metrics.contains("gncl,0.5,777,final"), "{metrics}");

    // An explicit flag wins over the environment.
    let out2 = dir.path().join("flagged");
    let output = gncl()
        .env("GNCL_SEED", "777")
        .args([
            "train",
            "--config",
            config.to_str().unwrap(),
            "--seed",
            "9",
            "--out",
            out2.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(output.status.success());
    let metrics = std::fs::read_to_string(out2.join("metrics.csv")).unwrap();
    assert!(metrics.contains("gncl,0.5,9,final"), "{metrics}");
}

#[test]
fn invalid_lambda_grid_exits_nonzero_before_training() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    let config = serde_json::json!({
        "seed": 1,
        "dataset": {"kind": "blobs", "n_per_class": 4, "classes": 2, "dims": 2, "spread": 0.5, "seed": 3},
        "methods": [{"method": "gncl", "lambda": 0.0}],
        "lambda_grid": [0.0, 1.5]
    });
    std::fs::write(&path, serde_json::to_string(&config).unwrap()).unwrap();
    let out = dir.path().join("never");
    let output = gncl()
        .args([
            "sweep",
            "--config",
            path.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(!output.status.success());
    assert!(!out.exists(), "no outputs may be written for invalid configs");
    let stderr = String::from_utf8(output.stderr).unwrap();
    assert!(stderr.contains("lambda"), "{stderr}");
}

#[test]
fn gradcheck_subcommand_passes() {
    let output = gncl()
        .args(["gradcheck", "--dims", "4,8,3", "--tolerance", "1e-5"])
        .output()
        .unwrap();
    assert!(output.status.success(), "{output:?}");
    let stdout = String::from_utf8(output.stdout).unwrap();
    for kind in ["mse", "nll", "crossentropy", "exponential", "gaussianhinge"] {
        assert!(stdout.contains(kind), "{stdout}");
    }
    assert!(!stdout.contains("FAIL"), "{stdout}");
}

#[test]
fn per_epoch_flag_emits_epoch_rows() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let out = dir.path().join("epochs");
    let output = gncl()
        .args([
            "train",
            "--config",
            config.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--per-epoch",
        ])
        .output()
        .unwrap();
    assert!(output.status.success(), "{output:?}");
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    // Three epochs plus the final row, under the header.
    assert_eq!(metrics.lines().count(), 5, "{metrics}");
    assert!(metrics.contains("gncl,0.5,42,0,"));
    assert!(metrics.contains("gncl,0.5,42,2,"));
    assert!(metrics.contains("gncl,0.5,42,final,"));
}

#[test]
fn sweep_writes_trend_for_lambda_grids() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sweep.json");
    let config = serde_json::json!({
        "seed": 7,
        "dataset": {"kind": "blobs", "n_per_class": 8, "classes": 2, "dims": 2, "spread": 0.5, "seed": 3},
        "net": {"hidden": [4], "binarized": false, "activation": "relu"},
        "train": {"members": 2, "epochs": 2, "batch_size": 4},
        "methods": [{"method": "gncl", "lambda": 0.0}],
        "lambda_grid": [0.0, 0.25, 0.5, 0.75, 1.0],
        "repeats": 2
    });
    std::fs::write(&path, serde_json::to_string(&config).unwrap()).unwrap();
    let out = dir.path().join("out");
    let output = gncl()
        .args([
            "sweep",
            "--config",
            path.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(output.status.success(), "{output:?}");
    assert!(out.join("trend.json").exists());
    let trend: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("trend.json")).unwrap()).unwrap();
    assert!(trend["mean_spearman_lambda_diversity"].is_number());
    assert_eq!(trend["per_seed"].as_array().unwrap().len(), 2);
}
