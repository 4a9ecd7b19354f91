//! Contracts of the command-line surface: output schemas, snapshot
//! persistence, partial-output cleanup, and binary-level behavior.

use std::path::Path;
use std::process::Command;

use krls::synth::{self, SynthConfig};
use krls_cli::commands;
use krls_cli::config::RunConfig;
use krls_cli::dataset;

fn small_synth_csv(dir: &Path, classes: usize, per_class: usize, seed: u64) -> std::path::PathBuf {
    let data = synth::generate(&SynthConfig {
        classes,
        dim: 8,
        atoms_per_class: 4,
        samples_per_class: per_class,
        sparsity: 2,
        noise: 0.05,
        seed,
    });
    let path = dir.join("data.csv");
    dataset::write_csv(&dataset::from_synth(&data), &path).unwrap();
    path
}

fn small_cfg() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.trainer.q = 5;
    cfg.trainer.l_max = 30;
    cfg.trainer.batch_size = 4;
    cfg.trainer.sparsity = 3;
    cfg.trainer.checkpoint_count = 5;
    cfg.trainer.seed = 21;
    cfg.folds = 3;
    cfg
}

#[test]
fn cv_metrics_row_counts_match_folds_and_checkpoints() {
    let dir = tempfile::TempDir::new().unwrap();
    let data = small_synth_csv(dir.path(), 2, 60, 1);
    let cfg = small_cfg();
    let out = dir.path().join("cv");
    commands::cmd_cv(&data, &out, &cfg).unwrap();

    let text = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("# krls-metrics v1"));
    assert_eq!(lines.next(), Some("fold,batch_index,accuracy"));
    let fold_rows = text
        .lines()
        .filter(|l| l.chars().next().is_some_and(|c| c.is_ascii_digit()))
        .count();
    let mean_rows = text.lines().filter(|l| l.starts_with("mean,")).count();
    assert_eq!(fold_rows, cfg.folds * cfg.trainer.checkpoint_count);
    assert_eq!(mean_rows, cfg.trainer.checkpoint_count);

    // the full report carries the same rows plus per-phase timings
    let report = std::fs::read_to_string(out.join("report.csv")).unwrap();
    let data_rows = report.lines().skip(2).count();
    assert_eq!(data_rows, cfg.folds * cfg.trainer.checkpoint_count);
    for line in report.lines().skip(2) {
        assert_eq!(
            line.split(',').count(),
            5,
            "fold,batch,acc,grow_ms,prune_ms"
        );
    }
    // report.json is the structured form of the same report
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(json["folds"].as_array().unwrap().len(), cfg.folds);
    assert_eq!(
        json["mean"].as_array().unwrap().len(),
        cfg.trainer.checkpoint_count
    );
    let fold0 = &json["folds"][0];
    assert_eq!(
        fold0["checkpoints"].as_array().unwrap().len(),
        cfg.trainer.checkpoint_count
    );
    assert!(fold0["per_class_errors"][0].as_array().unwrap().len() == 2);
    assert!(fold0["timings"][0]["grow_ms"].as_f64().unwrap() >= 0.0);

    assert!(out.join("manifest.json").exists());
}

#[test]
fn corrupt_eval_fraction_zero_equals_cv_final_accuracy() {
    let dir = tempfile::TempDir::new().unwrap();
    let data = small_synth_csv(dir.path(), 2, 60, 2);
    let cfg = small_cfg();
    let cv_out = dir.path().join("cv");
    commands::cmd_cv(&data, &cv_out, &cfg).unwrap();
    let corrupt_out = dir.path().join("corrupt");
    commands::cmd_corrupt_eval(&data, &corrupt_out, &cfg).unwrap();

    let metrics = std::fs::read_to_string(cv_out.join("metrics.csv")).unwrap();
    let final_cv: f64 = metrics
        .lines()
        .rfind(|l| l.starts_with("mean,"))
        .and_then(|l| l.split(',').nth(2))
        .unwrap()
        .parse()
        .unwrap();
    let curve = std::fs::read_to_string(corrupt_out.join("missing_curve.csv")).unwrap();
    let zero_row: f64 = curve
        .lines()
        .nth(2)
        .and_then(|l| l.split(',').nth(1))
        .unwrap()
        .parse()
        .unwrap();
    assert_eq!(zero_row.to_bits(), final_cv.to_bits());
}

#[test]
fn train_writes_loadable_profiles_per_class() {
    let dir = tempfile::TempDir::new().unwrap();
    let data = small_synth_csv(dir.path(), 2, 40, 3);
    let cfg = small_cfg();
    let out = dir.path().join("train");
    commands::cmd_train(&data, &out, &cfg).unwrap();

    for class in ["0", "1"] {
        let snap = std::fs::read_to_string(out.join(format!("profile_{class}.json"))).unwrap();
        let profile = krls::Profile::from_json(&snap).unwrap();
        assert_eq!(profile.q(), cfg.trainer.q);
        assert!(profile.l() <= cfg.trainer.l_max + cfg.trainer.batch_size);
        // the restored profile must still be able to code samples
        let ds = dataset::ingest_csv(&data).unwrap();
        profile
            .representation_error(ds.samples.column(0), cfg.trainer.sparsity)
            .unwrap();
    }
    let metrics = std::fs::read_to_string(out.join("train_metrics.csv")).unwrap();
    let rows = metrics.lines().skip(2).count();
    assert_eq!(rows, 2 * cfg.trainer.checkpoint_count);
}

#[test]
fn failed_command_removes_partial_outputs() {
    let dir = tempfile::TempDir::new().unwrap();
    // class 1 has too few samples to initialize a dictionary, so training
    // fails after class 0's snapshot was already written
    let data = synth::generate(&SynthConfig {
        classes: 2,
        dim: 8,
        atoms_per_class: 4,
        samples_per_class: 40,
        sparsity: 2,
        noise: 0.05,
        seed: 4,
    });
    let mut ds = dataset::from_synth(&data);
    let keep: Vec<usize> = (0..ds.len())
        .filter(|&j| ds.labels[j] == 0 || j < 8)
        .collect();
    ds.samples = ds.samples.select(ndarray::Axis(1), &keep);
    ds.labels = keep.iter().map(|&j| data.labels[j]).collect();
    let path = dir.path().join("skewed.csv");
    dataset::write_csv(&ds, &path).unwrap();

    let out = dir.path().join("train");
    let err = commands::cmd_train(&path, &out, &small_cfg()).unwrap_err();
    assert!(
        err.to_string().contains("class `1`"),
        "error names the class: {err}"
    );
    let leftovers: Vec<_> = std::fs::read_dir(&out)
        .map(|d| d.filter_map(|e| e.ok()).map(|e| e.file_name()).collect())
        .unwrap_or_default();
    assert!(
        leftovers.is_empty(),
        "partial outputs left behind: {leftovers:?}"
    );
}

#[test]
fn binary_reports_one_line_errors_and_nonzero_exit() {
    let bin = env!("CARGO_BIN_EXE_krls");
    let out = Command::new(bin)
        .args([
            "cv",
            "--data",
            "/nonexistent/nope.csv",
            "--out",
            "/tmp/krls-nope",
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.starts_with("error:"), "stderr was: {stderr}");
    assert_eq!(
        stderr.trim().lines().count(),
        1,
        "single-line cause: {stderr}"
    );
}

#[test]
fn binary_synth_then_train_roundtrip() {
    let dir = tempfile::TempDir::new().unwrap();
    let bin = env!("CARGO_BIN_EXE_krls");
    let csv = dir.path().join("mini.csv");
    let status = Command::new(bin)
        .args([
            "synth",
            "--out",
            csv.to_str().unwrap(),
            "--classes",
            "2",
            "--dim",
            "8",
            "--atoms-per-class",
            "4",
            "--samples-per-class",
            "30",
            "--seed",
            "9",
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let out = dir.path().join("trained");
    let status = Command::new(bin)
        .args([
            "train",
            "--data",
            csv.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--q",
            "5",
            "--l-max",
            "20",
            "--batch-size",
            "4",
            "--sparsity",
            "3",
            "--checkpoints",
            "4",
        ])
        .status()
        .unwrap();
    assert!(status.success());
    assert!(out.join("profile_0.json").exists());
    assert!(out.join("manifest.json").exists());
}

#[test]
fn config_file_is_respected_and_overridden_by_flags() {
    let dir = tempfile::TempDir::new().unwrap();
    let bin = env!("CARGO_BIN_EXE_krls");
    let csv = small_synth_csv(dir.path(), 2, 40, 5);
    let config_path = dir.path().join("config.json");
    std::fs::write(&config_path, r#"{"q": 5, "l_max": 25, "batch_size": 4, "sparsity": 3, "checkpoints": 3, "folds": 2, "seed": 7}"#).unwrap();
    let out = dir.path().join("cv");
    let output = Command::new(bin)
        .args([
            "cv",
            "--data",
            csv.to_str().unwrap(),
            "--config",
            config_path.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--seed",
            "99",
        ])
        .output()
        .unwrap();
    assert!(output.status.success());
    let stdout = String::from_utf8_lossy(&output.stdout);
    // flag wins over file for the seed; file wins over default for q
    assert!(
        stdout.contains("\"seed\":99"),
        "echo shows the flag seed: {stdout}"
    );
    assert!(
        stdout.contains("\"q\":5"),
        "echo shows the file q: {stdout}"
    );
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(
        metrics.lines().filter(|l| l.starts_with("mean,")).count(),
        3
    );

    // unknown config keys are rejected
    std::fs::write(&config_path, r#"{"q": 5, "mystery": 1}"#).unwrap();
    let output = Command::new(bin)
        .args([
            "cv",
            "--data",
            csv.to_str().unwrap(),
            "--config",
            config_path.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(!output.status.success());
}
