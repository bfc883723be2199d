//! End-to-end tests of the command-line surface: artifact layout,
//! override behavior, the evaluation attack menu, and exit codes.

use std::path::{Path, PathBuf};
use std::process::Command;

use at_lab::cli::{cmd_eval, cmd_landscape, cmd_train};
use at_lab::error::Error;

fn write_config(dir: &Path) -> PathBuf {
    let path = dir.join("run.json");
    let cfg = serde_json::json!({
        "dataset": { "kind": "blobs", "n_per_class": 20, "dim": 4, "classes": 3,
                     "spread": 0.2, "seed": 5 },
        "train": {
            "epochs": 3,
            "batch_size": 16,
            "hidden": [16],
            "attack": { "steps": 5 },
            "rampup": { "lambda_max": 10.0, "start_epoch": 2, "ramp_len": 2 }
        }
    });
    std::fs::write(&path, cfg.to_string()).unwrap();
    path
}

#[test]
fn train_writes_all_artifacts_with_one_csv_row_per_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let out = dir.path().join("out");
    cmd_train(&config, &[], Some(&out)).unwrap();

    for f in [
        "config_echo.json",
        "metrics.csv",
        "metrics.json",
        "checkpoint_last.json",
        "checkpoint_best.json",
    ] {
        assert!(out.join(f).exists(), "missing artifact {f}");
    }
    let csv = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    // Header plus one row per epoch.
    assert_eq!(csv.lines().count(), 1 + 3);
    assert!(csv.starts_with("epoch,nat_train,nat_test,rob_train,rob_test,gap,"));
}

#[test]
fn repeated_override_runs_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let overrides = vec!["seed=7".to_string()];
    let out = dir.path().join("a");
    let files = ["metrics.csv", "metrics.json", "checkpoint_last.json"];
    cmd_train(&config, &overrides, Some(&out)).unwrap();
    let first: Vec<Vec<u8>> = files.iter().map(|f| std::fs::read(out.join(f)).unwrap()).collect();
    cmd_train(&config, &overrides, Some(&out)).unwrap();
    for (f, bytes) in files.iter().zip(&first) {
        assert_eq!(
            &std::fs::read(out.join(f)).unwrap(),
            bytes,
            "{f} differs between identical runs"
        );
    }
}

#[test]
fn method_override_is_inert_while_consistency_is_off() {
    // With the warm-up covering the whole run, pgd_at_mt degenerates to
    // pgd_at, so switching the method must not change the metrics.
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let out_at = dir.path().join("at");
    let out_mt = dir.path().join("mt");
    cmd_train(
        &config,
        &["rampup.start_epoch=3".into()],
        Some(&out_at),
    )
    .unwrap();
    cmd_train(
        &config,
        &["rampup.start_epoch=3".into(), "method=pgd_at_mt".into()],
        Some(&out_mt),
    )
    .unwrap();
    assert_eq!(
        std::fs::read(out_at.join("metrics.csv")).unwrap(),
        std::fs::read(out_mt.join("metrics.csv")).unwrap()
    );
}

fn eval_report(
    checkpoint: &Path,
    config: &Path,
    attack: &str,
    dir: &Path,
) -> serde_json::Value {
    let out = dir.join(format!("report_{attack}.json"));
    cmd_eval(checkpoint, attack, config, "test", 0, Some(&out)).unwrap();
    serde_json::from_str(&std::fs::read_to_string(out).unwrap()).unwrap()
}

#[test]
fn eval_menu_none_matches_natural_and_more_steps_are_stronger() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let out = dir.path().join("out");
    cmd_train(&config, &[], Some(&out)).unwrap();
    let ckpt = out.join("checkpoint_last.json");

    let none = eval_report(&ckpt, &config, "none", dir.path());
    assert_eq!(none["natural_accuracy"], none["robust_accuracy"]);

    let pgd10 = eval_report(&ckpt, &config, "pgd10", dir.path());
    let pgd100 = eval_report(&ckpt, &config, "pgd100", dir.path());
    let r10 = pgd10["robust_accuracy"].as_f64().unwrap();
    let r100 = pgd100["robust_accuracy"].as_f64().unwrap();
    assert!(r100 <= r10, "pgd100 ({r100}) should be at most pgd10 ({r10})");
    assert!(r10 <= none["natural_accuracy"].as_f64().unwrap());

    let cw = eval_report(&ckpt, &config, "cw100", dir.path());
    assert!(cw["robust_accuracy"].as_f64().unwrap() <= none["natural_accuracy"].as_f64().unwrap());
}

#[test]
fn eval_rejects_unknown_attack_and_missing_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let missing = dir.path().join("nope.json");
    assert!(matches!(
        cmd_eval(&missing, "autoattack", &config, "test", 0, None),
        Err(Error::UnknownAttack(_))
    ));
    assert!(cmd_eval(&missing, "pgd10", &config, "test", 0, None).is_err());
}

#[test]
fn landscape_csv_has_default_grid_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let out = dir.path().join("out");
    cmd_train(&config, &[], Some(&out)).unwrap();
    let ckpt = out.join("checkpoint_last.json");

    let csv_a = dir.path().join("a.csv");
    let csv_b = dir.path().join("b.csv");
    cmd_landscape(&ckpt, &config, "test", 3, Some(&csv_a)).unwrap();
    cmd_landscape(&ckpt, &config, "test", 3, Some(&csv_b)).unwrap();

    let text = std::fs::read_to_string(&csv_a).unwrap();
    assert_eq!(text.lines().count(), 1 + 21, "header plus 21 grid rows");
    assert_eq!(text.lines().next().unwrap(), "alpha,loss");
    assert!(text.lines().any(|l| l.starts_with("0.000000000e0,")
        || l.starts_with("0e0,")
        || l.starts_with("0.0,")));
    assert_eq!(text, std::fs::read_to_string(&csv_b).unwrap());
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_at-lab");
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let out = dir.path().join("out");

    let ok = Command::new(bin)
        .args(["train", "--config"])
        .arg(&config)
        .arg("--out-dir")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(ok.status.code(), Some(0), "{:?}", ok);
    let summary = String::from_utf8(ok.stdout).unwrap();
    // Final line: `method nat rob gap`.
    assert!(summary.starts_with("pgd_at "), "summary was {summary:?}");
    assert_eq!(summary.trim().split(' ').count(), 4);

    let usage = Command::new(bin)
        .args(["eval", "--attack", "autoattack", "--config"])
        .arg(&config)
        .arg("--checkpoint")
        .arg(out.join("checkpoint_last.json"))
        .output()
        .unwrap();
    assert_eq!(usage.status.code(), Some(2));

    let failure = Command::new(bin)
        .args(["train", "--config"])
        .arg(dir.path().join("absent.json"))
        .output()
        .unwrap();
    assert_eq!(failure.status.code(), Some(1));
}
