//! Command implementations. Every command echoes its resolved configuration,
//! writes its artifacts under the output directory, emits a run manifest,
//! and removes partial outputs when it fails.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use ndarray::{s, Array2, Axis};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use krls::classifier::{self, CvReport};
use krls::synth::SynthConfig;
use krls::trainer::{self, train_online};
use krls::Profile;

use crate::config::{kernel_spec_string, RunConfig};
use crate::dataset::{self, Dataset};

const METRICS_HEADER: &str = "# krls-metrics v1";

/// Tracks files created by a command; anything not committed is removed on
/// drop so failed runs leave no partial outputs behind.
struct OutputGuard {
    paths: Vec<PathBuf>,
    committed: bool,
}

impl OutputGuard {
    fn new() -> Self {
        OutputGuard {
            paths: Vec::new(),
            committed: false,
        }
    }

    fn track(&mut self, path: &Path) -> PathBuf {
        self.paths.push(path.to_path_buf());
        path.to_path_buf()
    }

    fn commit(mut self) -> Vec<PathBuf> {
        self.committed = true;
        std::mem::take(&mut self.paths)
    }
}

impl Drop for OutputGuard {
    fn drop(&mut self) {
        if !self.committed {
            for p in &self.paths {
                let _ = fs::remove_file(p);
            }
        }
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    seed: u64,
    kernel: String,
    config: &'a RunConfig,
    versions: BTreeMap<&'static str, &'static str>,
    wall_ms: f64,
    outputs: Vec<String>,
}

fn echo_config(command: &str, cfg: &RunConfig) {
    println!(
        "{}",
        serde_json::json!({
            "command": command,
            "seed": cfg.trainer.seed,
            "kernel": kernel_spec_string(cfg.kernel),
            "config": cfg,
        })
    );
}

fn prepare_out_dir(out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating output dir {}", out.display()))
}

fn write_manifest(
    out: &Path,
    guard: &mut OutputGuard,
    command: &str,
    cfg: &RunConfig,
    started: Instant,
    outputs: &[PathBuf],
) -> Result<()> {
    let manifest = Manifest {
        command,
        seed: cfg.trainer.seed,
        kernel: kernel_spec_string(cfg.kernel),
        config: cfg,
        versions: BTreeMap::from([
            ("krls", env!("CARGO_PKG_VERSION")),
            ("krls-cli", env!("CARGO_PKG_VERSION")),
        ]),
        wall_ms: started.elapsed().as_secs_f64() * 1e3,
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
    };
    let path = guard.track(&out.join("manifest.json"));
    fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    let ds = dataset::ingest_csv(path)
        .with_context(|| format!("ingesting dataset {}", path.display()))?;
    println!(
        "dataset: {} samples, {} features, {} classes ({:?})",
        ds.len(),
        ds.n(),
        ds.class_count(),
        ds.label_names
    );
    Ok(ds)
}

fn sanitize_label(label: &str) -> String {
    label
        .chars()
        .map(|c| {
            if c.is_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Train one profile per class over the full dataset; write per-class
/// profile snapshots and a training metrics CSV.
pub fn cmd_train(data_path: &Path, out: &Path, cfg: &RunConfig) -> Result<()> {
    let started = Instant::now();
    echo_config("train", cfg);
    prepare_out_dir(out)?;
    let ds = load_dataset(data_path)?;
    let mut guard = OutputGuard::new();

    let metrics_path = guard.track(&out.join("train_metrics.csv"));
    let mut metrics = String::new();
    writeln!(metrics, "{METRICS_HEADER}")?;
    writeln!(metrics, "class,batch_index,profile_size,grow_ms,prune_ms")?;

    let mut snapshot_paths = Vec::new();
    for class in 0..ds.class_count() {
        let cols: Vec<usize> = (0..ds.len()).filter(|&j| ds.labels[j] == class).collect();
        if cols.len() < cfg.trainer.q {
            bail!(
                "class `{}` has {} samples but q={} are needed to initialize",
                ds.label_names[class],
                cols.len(),
                cfg.trainer.q
            );
        }
        let class_data = ds.samples.select(Axis(1), &cols);
        let label = ds.label_names[class].clone();
        let mut rows: Vec<String> = Vec::new();
        let profile = train_online(class_data.view(), &cfg.trainer, cfg.kernel, |cp| {
            rows.push(format!(
                "{label},{},{},{},{}",
                cp.batch_index,
                cp.profile.l(),
                cp.grow_ms,
                cp.prune_ms
            ));
        })
        .with_context(|| format!("training class `{label}`"))?;
        for row in rows {
            writeln!(metrics, "{row}")?;
        }
        let snap_path = guard.track(&out.join(format!("profile_{}.json", sanitize_label(&label))));
        fs::write(&snap_path, profile.to_json())?;
        snapshot_paths.push(snap_path);
    }
    fs::write(&metrics_path, metrics)?;

    let mut outputs = vec![metrics_path];
    outputs.extend(snapshot_paths);
    write_manifest(out, &mut guard, "train", cfg, started, &outputs)?;
    guard.commit();
    Ok(())
}

fn render_cv_metrics(report: &CvReport) -> String {
    let mut text = String::new();
    text.push_str(METRICS_HEADER);
    text.push_str("\nfold,batch_index,accuracy\n");
    for (fold, rep) in report.folds.iter().enumerate() {
        for cp in &rep.checkpoints {
            text.push_str(&format!("{fold},{},{}\n", cp.batch_index, cp.accuracy));
        }
    }
    for cp in &report.mean {
        text.push_str(&format!("mean,{},{}\n", cp.batch_index, cp.accuracy));
    }
    text
}

fn render_cv_report_csv(report: &CvReport) -> String {
    let mut text = String::new();
    text.push_str(METRICS_HEADER);
    text.push_str("\nfold,batch_index,accuracy,grow_ms,prune_ms\n");
    for (fold, rep) in report.folds.iter().enumerate() {
        for (cp, t) in rep.checkpoints.iter().zip(rep.timings.iter()) {
            text.push_str(&format!(
                "{fold},{},{},{},{}\n",
                cp.batch_index, cp.accuracy, t.grow_ms, t.prune_ms
            ));
        }
    }
    text
}

/// Stratified cross-validation; writes the accuracy-vs-batch metrics CSV
/// (per fold plus mean), the full per-checkpoint report with timings, and a
/// JSON report.
pub fn cmd_cv(data_path: &Path, out: &Path, cfg: &RunConfig) -> Result<()> {
    let started = Instant::now();
    echo_config("cv", cfg);
    prepare_out_dir(out)?;
    let ds = load_dataset(data_path)?;
    let mut guard = OutputGuard::new();

    let report = classifier::cross_validate(
        ds.samples.view(),
        &ds.labels,
        cfg.folds,
        &cfg.trainer,
        cfg.kernel,
    )?;

    let metrics_path = guard.track(&out.join("metrics.csv"));
    fs::write(&metrics_path, render_cv_metrics(&report))?;
    let report_csv_path = guard.track(&out.join("report.csv"));
    fs::write(&report_csv_path, render_cv_report_csv(&report))?;
    let report_json_path = guard.track(&out.join("report.json"));
    fs::write(&report_json_path, serde_json::to_string_pretty(&report)?)?;

    if let Some(last) = report.mean.last() {
        println!("final mean accuracy: {:.4}", last.accuracy);
    }
    let outputs = vec![metrics_path, report_csv_path, report_json_path];
    write_manifest(out, &mut guard, "cv", cfg, started, &outputs)?;
    guard.commit();
    Ok(())
}

/// Train exactly as `cv` does, then evaluate the final dictionaries on test
/// samples with a growing fraction of zeroed entries.
pub fn cmd_corrupt_eval(data_path: &Path, out: &Path, cfg: &RunConfig) -> Result<()> {
    let started = Instant::now();
    echo_config("corrupt-eval", cfg);
    prepare_out_dir(out)?;
    let ds = load_dataset(data_path)?;
    let mut guard = OutputGuard::new();

    let curve = classifier::missing_data_curve(
        ds.samples.view(),
        &ds.labels,
        cfg.folds,
        &cfg.trainer,
        cfg.kernel,
        &cfg.missing_fractions,
    )?;

    let path = guard.track(&out.join("missing_curve.csv"));
    let mut text = String::new();
    writeln!(text, "{METRICS_HEADER}")?;
    writeln!(text, "fraction,accuracy")?;
    for (fraction, accuracy) in &curve {
        writeln!(text, "{fraction},{accuracy}")?;
        println!(
            "missing {:>4.0}%: accuracy {:.4}",
            fraction * 100.0,
            accuracy
        );
    }
    fs::write(&path, text)?;

    let outputs = vec![path];
    write_manifest(out, &mut guard, "corrupt-eval", cfg, started, &outputs)?;
    guard.commit();
    Ok(())
}

/// Median wall time of single-sample grow and prune updates at increasing
/// profile sizes, on seeded synthetic data.
pub fn cmd_bench_scaling(out: &Path, cfg: &RunConfig) -> Result<()> {
    let started = Instant::now();
    echo_config("bench-scaling", cfg);
    prepare_out_dir(out)?;
    let mut guard = OutputGuard::new();

    let path = guard.track(&out.join("bench.csv"));
    let mut text = String::new();
    writeln!(text, "{METRICS_HEADER}")?;
    writeln!(text, "l,reps,grow_median_ms,prune_median_ms")?;
    for &l in &cfg.bench_sizes {
        let (grow_ms, prune_ms) = bench_updates_at(l, cfg)?;
        println!(
            "L={l}: grow {grow_ms:.4} ms, prune {prune_ms:.4} ms (median of {})",
            cfg.bench_reps
        );
        writeln!(text, "{l},{},{grow_ms},{prune_ms}", cfg.bench_reps)?;
    }
    fs::write(&path, text)?;

    let outputs = vec![path];
    write_manifest(out, &mut guard, "bench-scaling", cfg, started, &outputs)?;
    guard.commit();
    Ok(())
}

/// Build a profile of size `l` from random data, then measure `reps`
/// single-sample grow/prune cycles around that size.
fn bench_updates_at(l: usize, cfg: &RunConfig) -> Result<(f64, f64)> {
    let q = 10usize.min(l / 2).max(2);
    let sparsity = 3usize.min(q - 1).max(1);
    let n = 8usize;
    if l <= q {
        bail!("bench size {l} must exceed the {q}-atom dictionary");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.trainer.seed ^ 0xbe9c);
    let total = l + cfg.bench_reps + q + 1;
    let data = Array2::from_shape_fn((n, total), |_| rng.random::<f64>() * 2.0 - 1.0);

    let mut profile = Profile::init(data.slice(s![.., ..q]), cfg.kernel, cfg.trainer.gamma)
        .map_err(|e| anyhow::anyhow!("{e}"))?;
    let mut next = q;
    while profile.l() < l {
        grow_one(&mut profile, &data, next, sparsity)?;
        next += 1;
    }

    let mut grow_times = Vec::with_capacity(cfg.bench_reps);
    let mut prune_times = Vec::with_capacity(cfg.bench_reps);
    for _ in 0..cfg.bench_reps {
        let x = data.slice(s![.., next..next + 1]);
        let code = profile
            .code(x.column(0), sparsity)
            .map_err(|e| anyhow::anyhow!("{e}"))?;
        let w = code.dense().insert_axis(Axis(1));
        let t0 = Instant::now();
        profile
            .grow(x.view(), w.view(), 1.0)
            .map_err(|e| anyhow::anyhow!("{e}"))?;
        grow_times.push(t0.elapsed().as_secs_f64() * 1e3);
        next += 1;

        let candidates =
            trainer::select_prune_candidates(&profile, 1).map_err(|e| anyhow::anyhow!("{e}"))?;
        let t1 = Instant::now();
        profile
            .prune(&candidates)
            .map_err(|e| anyhow::anyhow!("{e}"))?;
        prune_times.push(t1.elapsed().as_secs_f64() * 1e3);
    }
    Ok((median(&mut grow_times), median(&mut prune_times)))
}

fn grow_one(profile: &mut Profile, data: &Array2<f64>, col: usize, sparsity: usize) -> Result<()> {
    let x = data.slice(s![.., col..col + 1]);
    let code = profile
        .code(x.column(0), sparsity)
        .map_err(|e| anyhow::anyhow!("{e}"))?;
    let w = code.dense().insert_axis(Axis(1));
    profile
        .grow(x.view(), w.view(), 1.0)
        .map_err(|e| anyhow::anyhow!("{e}"))?;
    Ok(())
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = values.len() / 2;
    if values.len() % 2 == 1 {
        values[mid]
    } else {
        0.5 * (values[mid - 1] + values[mid])
    }
}

/// Run the batch dictionary learner per class on each fold's training split
/// and report fold accuracies: the benchmark the online curves approach.
pub fn cmd_batch_kmod(data_path: &Path, out: &Path, cfg: &RunConfig) -> Result<()> {
    let started = Instant::now();
    echo_config("batch-kmod", cfg);
    prepare_out_dir(out)?;
    let ds = load_dataset(data_path)?;
    let mut guard = OutputGuard::new();

    let accuracies = classifier::kmod_reference_accuracy(
        ds.samples.view(),
        &ds.labels,
        cfg.folds,
        &cfg.trainer,
        cfg.kernel,
        cfg.kmod_iters,
    )?;

    let path = guard.track(&out.join("kmod.csv"));
    let mut text = String::new();
    writeln!(text, "{METRICS_HEADER}")?;
    writeln!(text, "fold,iters,accuracy")?;
    for (fold, acc) in accuracies.iter().enumerate() {
        writeln!(text, "{fold},{},{acc}", cfg.kmod_iters)?;
    }
    let mean = accuracies.iter().sum::<f64>() / accuracies.len().max(1) as f64;
    writeln!(text, "mean,{},{mean}", cfg.kmod_iters)?;
    println!("batch mean accuracy: {mean:.4}");
    fs::write(&path, text)?;

    let outputs = vec![path];
    write_manifest(out, &mut guard, "batch-kmod", cfg, started, &outputs)?;
    guard.commit();
    Ok(())
}

/// Write the bundled synthetic planted-dictionary benchmark as a CSV
/// dataset.
pub fn cmd_synth(out_file: &Path, synth_cfg: &SynthConfig) -> Result<()> {
    if let Some(parent) = out_file.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let data = krls::synth::generate(synth_cfg);
    let ds = dataset::from_synth(&data);
    dataset::write_csv(&ds, out_file).map_err(|e| anyhow::anyhow!("{e}"))?;
    println!(
        "wrote {} samples ({} classes, {} features) to {}",
        ds.len(),
        ds.class_count(),
        ds.n(),
        out_file.display()
    );
    Ok(())
}
