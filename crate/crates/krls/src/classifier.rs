//! Sparse-representation classification: one dictionary per class, samples
//! assigned to the class whose dictionary yields the smallest representation
//! error. Includes stratified cross-validation with checkpointed accuracy
//! curves and a missing-data robustness harness.

use ndarray::{Array1, ArrayView1, ArrayView2, Axis};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::kernels::Kernel;
use crate::oracle::{self, OracleError};
use crate::profile::{Profile, ProfileError};
use crate::trainer::{train_online, TrainError, TrainerConfig};

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("labels ({labels}) and samples ({samples}) disagree")]
    LabelCount { labels: usize, samples: usize },
    #[error("class {label} has {count} samples but at least {needed} are required")]
    ClassTooSmall {
        label: usize,
        count: usize,
        needed: usize,
    },
    #[error("need at least 2 folds, got {0}")]
    TooFewFolds(usize),
    #[error("model has no classes")]
    EmptyModel,
    #[error("no class produced a representation error for the sample")]
    AllClassesFailed,
    #[error("missing fraction must lie in [0, 1], got {0}")]
    BadFraction(f64),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

/// One trained dictionary per class, sharing a kernel and configuration.
#[derive(Debug, Clone)]
pub struct ClassifierModel {
    pub classes: Vec<(usize, Profile)>,
    pub kernel: Kernel,
    pub cfg: TrainerConfig,
}

/// Train one profile per distinct label. Classes are trained independently,
/// each over its own samples in stream order.
pub fn fit(
    samples: ArrayView2<f64>,
    labels: &[usize],
    cfg: &TrainerConfig,
    kernel: Kernel,
) -> Result<ClassifierModel, ClassifierError> {
    if labels.len() != samples.ncols() {
        return Err(ClassifierError::LabelCount {
            labels: labels.len(),
            samples: samples.ncols(),
        });
    }
    let mut classes = Vec::new();
    for label in distinct_labels(labels) {
        let cols: Vec<usize> = (0..labels.len()).filter(|&j| labels[j] == label).collect();
        if cols.len() < cfg.q {
            return Err(ClassifierError::ClassTooSmall {
                label,
                count: cols.len(),
                needed: cfg.q,
            });
        }
        let class_data = samples.select(Axis(1), &cols);
        let profile = train_online(class_data.view(), cfg, kernel, |_| {})?;
        classes.push((label, profile));
    }
    Ok(ClassifierModel {
        classes,
        kernel,
        cfg: cfg.clone(),
    })
}

/// Assign `x` to the class with the smallest `s`-sparse representation
/// error; ties go to the earlier class in label order.
pub fn predict(
    model: &ClassifierModel,
    x: ArrayView1<f64>,
    s: usize,
) -> Result<usize, ClassifierError> {
    if model.classes.is_empty() {
        return Err(ClassifierError::EmptyModel);
    }
    let mut best: Option<(usize, f64)> = None;
    for (label, profile) in &model.classes {
        let Ok(err) = profile.representation_error(x, s) else {
            continue; // a failing class simply does not compete
        };
        if best.is_none_or(|(_, e)| err < e) {
            best = Some((*label, err));
        }
    }
    best.map(|(label, _)| label)
        .ok_or(ClassifierError::AllClassesFailed)
}

/// Zero out exactly `round(fraction · N)` uniformly chosen entries of `x`.
pub fn corrupt_missing(
    x: ArrayView1<f64>,
    fraction: f64,
    rng: &mut impl Rng,
) -> Result<Array1<f64>, ClassifierError> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(ClassifierError::BadFraction(fraction));
    }
    let n = x.len();
    let zeroed = (fraction * n as f64).round() as usize;
    let mut out = x.to_owned();
    for idx in rand::seq::index::sample(rng, n, zeroed.min(n)) {
        out[idx] = 0.0;
    }
    Ok(out)
}

/// Accuracy at one checkpoint of the training run.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CheckpointAccuracy {
    pub batch_index: usize,
    pub accuracy: f64,
}

/// Cumulative per-phase wall-clock times at one checkpoint, summed over the
/// per-class trainers.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct PhaseMs {
    pub grow_ms: f64,
    pub prune_ms: f64,
}

/// Accuracy curve of one cross-validation fold.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub checkpoints: Vec<CheckpointAccuracy>,
    /// Mean test representation error per checkpoint and class
    /// (`checkpoints × classes`).
    pub per_class_errors: Option<Vec<Vec<f64>>>,
    /// Aligned with `checkpoints`.
    pub timings: Vec<PhaseMs>,
}

/// All folds plus the mean curve.
#[derive(Debug, Clone, Serialize)]
pub struct CvReport {
    pub folds: Vec<EvalReport>,
    pub mean: Vec<CheckpointAccuracy>,
}

/// A fold's full outcome, for callers that also need the trained models.
pub struct FoldOutcome {
    pub report: EvalReport,
    pub final_models: Vec<(usize, Profile)>,
    pub test_indices: Vec<usize>,
}

/// Deterministic stratified fold assignment: per class, a seeded shuffle
/// split into `k` nearly equal chunks. Returns the test indices per fold.
pub fn stratified_folds(
    labels: &[usize],
    k: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>, ClassifierError> {
    if k < 2 {
        return Err(ClassifierError::TooFewFolds(k));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds: Vec<Vec<usize>> = vec![Vec::new(); k];
    for label in distinct_labels(labels) {
        let mut cols: Vec<usize> = (0..labels.len()).filter(|&j| labels[j] == label).collect();
        if cols.len() < k {
            return Err(ClassifierError::ClassTooSmall {
                label,
                count: cols.len(),
                needed: k,
            });
        }
        cols.shuffle(&mut rng);
        for (i, col) in cols.into_iter().enumerate() {
            folds[i % k].push(col);
        }
    }
    for fold in &mut folds {
        fold.sort_unstable();
    }
    Ok(folds)
}

/// Stratified `k`-fold cross-validation with checkpointed evaluation.
///
/// Per fold, every class is trained on the fold's training split while the
/// checkpoint callback snapshots the per-class profiles; at each checkpoint
/// ordinal the hold-out samples are classified against the snapshots of all
/// classes, yielding an accuracy curve per fold.
pub fn cross_validate_detailed(
    samples: ArrayView2<f64>,
    labels: &[usize],
    k: usize,
    cfg: &TrainerConfig,
    kernel: Kernel,
) -> Result<Vec<FoldOutcome>, ClassifierError> {
    if labels.len() != samples.ncols() {
        return Err(ClassifierError::LabelCount {
            labels: labels.len(),
            samples: samples.ncols(),
        });
    }
    cfg.validate()?;
    let folds = stratified_folds(labels, k, cfg.seed)?;
    let class_labels = distinct_labels(labels);
    let mut outcomes = Vec::with_capacity(k);

    for test_idx in folds {
        let in_test: Vec<bool> = {
            let mut mask = vec![false; labels.len()];
            for &j in &test_idx {
                mask[j] = true;
            }
            mask
        };

        // per class: train on this fold's training split, snapshotting at
        // every checkpoint
        let mut snapshots: Vec<Vec<ClassSnapshot>> = Vec::new();
        let mut final_models = Vec::new();
        for &label in &class_labels {
            let cols: Vec<usize> = (0..labels.len())
                .filter(|&j| labels[j] == label && !in_test[j])
                .collect();
            if cols.len() < cfg.q {
                return Err(ClassifierError::ClassTooSmall {
                    label,
                    count: cols.len(),
                    needed: cfg.q,
                });
            }
            let class_data = samples.select(Axis(1), &cols);
            let mut class_snaps = Vec::with_capacity(cfg.checkpoint_count);
            let profile = train_online(class_data.view(), cfg, kernel, |cp| {
                class_snaps.push(ClassSnapshot {
                    batch_index: cp.batch_index,
                    profile: cp.profile.clone(),
                    grow_ms: cp.grow_ms,
                    prune_ms: cp.prune_ms,
                });
            })?;
            snapshots.push(class_snaps);
            final_models.push((label, profile));
        }

        let ordinals = snapshots.iter().map(|s| s.len()).min().unwrap_or(0);
        let mut checkpoints = Vec::with_capacity(ordinals);
        let mut timings = Vec::with_capacity(ordinals);
        let mut per_class_errors = Vec::with_capacity(ordinals);
        for t in 0..ordinals {
            let batch_index = snapshots.iter().map(|s| s[t].batch_index).max().unwrap();
            let mut correct = 0usize;
            let mut err_sums = vec![0.0f64; class_labels.len()];
            for &j in &test_idx {
                let x = samples.column(j);
                let mut best: Option<(usize, f64)> = None;
                for (c, class_snaps) in snapshots.iter().enumerate() {
                    let err = class_snaps[t]
                        .profile
                        .representation_error(x, cfg.sparsity)?;
                    err_sums[c] += err;
                    if best.is_none_or(|(_, e)| err < e) {
                        best = Some((class_labels[c], err));
                    }
                }
                if best.map(|(label, _)| label) == Some(labels[j]) {
                    correct += 1;
                }
            }
            let accuracy = correct as f64 / test_idx.len().max(1) as f64;
            checkpoints.push(CheckpointAccuracy {
                batch_index,
                accuracy,
            });
            timings.push(PhaseMs {
                grow_ms: snapshots.iter().map(|s| s[t].grow_ms).sum(),
                prune_ms: snapshots.iter().map(|s| s[t].prune_ms).sum(),
            });
            per_class_errors.push(
                err_sums
                    .iter()
                    .map(|s| s / test_idx.len().max(1) as f64)
                    .collect::<Vec<f64>>(),
            );
        }

        outcomes.push(FoldOutcome {
            report: EvalReport {
                checkpoints,
                per_class_errors: Some(per_class_errors),
                timings,
            },
            final_models,
            test_indices: test_idx,
        });
    }
    Ok(outcomes)
}

/// [`cross_validate_detailed`] reduced to the per-fold reports plus the mean
/// accuracy curve.
pub fn cross_validate(
    samples: ArrayView2<f64>,
    labels: &[usize],
    k: usize,
    cfg: &TrainerConfig,
    kernel: Kernel,
) -> Result<CvReport, ClassifierError> {
    let outcomes = cross_validate_detailed(samples, labels, k, cfg, kernel)?;
    let folds: Vec<EvalReport> = outcomes.into_iter().map(|o| o.report).collect();
    let mean = mean_curve(&folds);
    Ok(CvReport { folds, mean })
}

/// Average the fold curves ordinal by ordinal.
pub fn mean_curve(folds: &[EvalReport]) -> Vec<CheckpointAccuracy> {
    let ordinals = folds.iter().map(|f| f.checkpoints.len()).min().unwrap_or(0);
    (0..ordinals)
        .map(|t| CheckpointAccuracy {
            batch_index: folds
                .iter()
                .map(|f| f.checkpoints[t].batch_index)
                .max()
                .unwrap(),
            accuracy: folds.iter().map(|f| f.checkpoints[t].accuracy).sum::<f64>()
                / folds.len() as f64,
        })
        .collect()
}

/// Cross-validated accuracy as a function of the fraction of zeroed entries
/// in the test samples. Training sees clean data only; the returned pairs
/// are `(fraction, mean accuracy)`.
pub fn missing_data_curve(
    samples: ArrayView2<f64>,
    labels: &[usize],
    k: usize,
    cfg: &TrainerConfig,
    kernel: Kernel,
    fractions: &[f64],
) -> Result<Vec<(f64, f64)>, ClassifierError> {
    let outcomes = cross_validate_detailed(samples, labels, k, cfg, kernel)?;
    let mut curve = Vec::with_capacity(fractions.len());
    for (fi, &fraction) in fractions.iter().enumerate() {
        // mean of per-fold accuracies, matching how the clean curves are
        // aggregated so the fraction-0 point reproduces them exactly
        let mut fold_accuracies = Vec::with_capacity(outcomes.len());
        for (fold, outcome) in outcomes.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(
                cfg.seed
                    ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(fi as u64 * 64 + fold as u64 + 1)),
            );
            let mut correct = 0usize;
            for &j in &outcome.test_indices {
                let x = corrupt_missing(samples.column(j), fraction, &mut rng)?;
                let mut best: Option<(usize, f64)> = None;
                for (label, profile) in &outcome.final_models {
                    let err = profile.representation_error(x.view(), cfg.sparsity)?;
                    if best.is_none_or(|(_, e)| err < e) {
                        best = Some((*label, err));
                    }
                }
                if best.map(|(l, _)| l) == Some(labels[j]) {
                    correct += 1;
                }
            }
            fold_accuracies.push(correct as f64 / outcome.test_indices.len().max(1) as f64);
        }
        let mean = fold_accuracies.iter().sum::<f64>() / fold_accuracies.len().max(1) as f64;
        curve.push((fraction, mean));
    }
    Ok(curve)
}

/// Per-fold final accuracy of the batch dictionary learner, evaluated on the
/// same stratified folds as the online path. This is the benchmark the
/// online accuracies are compared against.
pub fn kmod_reference_accuracy(
    samples: ArrayView2<f64>,
    labels: &[usize],
    k: usize,
    cfg: &TrainerConfig,
    kernel: Kernel,
    iters: usize,
) -> Result<Vec<f64>, ClassifierError> {
    if labels.len() != samples.ncols() {
        return Err(ClassifierError::LabelCount {
            labels: labels.len(),
            samples: samples.ncols(),
        });
    }
    cfg.validate()?;
    let folds = stratified_folds(labels, k, cfg.seed)?;
    let class_labels = distinct_labels(labels);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xb00c_ab1e);
    let mut accuracies = Vec::with_capacity(folds.len());
    for test_idx in folds {
        let mut in_test = vec![false; labels.len()];
        for &j in &test_idx {
            in_test[j] = true;
        }
        let mut models: Vec<(usize, Profile)> = Vec::new();
        for &label in &class_labels {
            let cols: Vec<usize> = (0..labels.len())
                .filter(|&j| labels[j] == label && !in_test[j])
                .collect();
            let class_data = samples.select(Axis(1), &cols);
            let (profile, _) = oracle::batch_kmod(
                class_data.view(),
                kernel,
                cfg.q,
                cfg.sparsity,
                cfg.gamma,
                iters,
                &mut rng,
            )?;
            models.push((label, profile));
        }
        let mut correct = 0usize;
        for &j in &test_idx {
            let x = samples.column(j);
            let mut best: Option<(usize, f64)> = None;
            for (label, profile) in &models {
                let err = profile.representation_error(x, cfg.sparsity)?;
                if best.is_none_or(|(_, e)| err < e) {
                    best = Some((*label, err));
                }
            }
            if best.map(|(l, _)| l) == Some(labels[j]) {
                correct += 1;
            }
        }
        accuracies.push(correct as f64 / test_idx.len().max(1) as f64);
    }
    Ok(accuracies)
}

struct ClassSnapshot {
    batch_index: usize,
    profile: Profile,
    grow_ms: f64,
    prune_ms: f64,
}

fn distinct_labels(labels: &[usize]) -> Vec<usize> {
    let mut out: Vec<usize> = labels.to_vec();
    out.sort_unstable();
    out.dedup();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{concatenate, Array2};

    fn two_class_orthonormal() -> (Array2<f64>, Vec<usize>) {
        // class 0 lives on the first 3 coordinates, class 1 on the last 3
        let n = 6;
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let make = |rng: &mut ChaCha8Rng, lo: usize| {
            Array2::from_shape_fn((n, 12), |(i, _)| {
                if i >= lo && i < lo + 3 {
                    rng.random::<f64>() + 0.2
                } else {
                    0.0
                }
            })
        };
        let a = make(&mut rng, 0);
        let b = make(&mut rng, 3);
        let samples = concatenate![Axis(1), a.view(), b.view()];
        let labels: Vec<usize> = std::iter::repeat_n(0, 12)
            .chain(std::iter::repeat_n(1, 12))
            .collect();
        (samples, labels)
    }

    fn tiny_cfg() -> TrainerConfig {
        TrainerConfig {
            q: 3,
            l_max: 8,
            batch_size: 2,
            sparsity: 2,
            checkpoint_count: 3,
            ..TrainerConfig::default()
        }
    }

    #[test]
    fn fit_trains_one_profile_per_class() {
        let (samples, labels) = two_class_orthonormal();
        let model = fit(samples.view(), &labels, &tiny_cfg(), Kernel::Linear).unwrap();
        assert_eq!(model.classes.len(), 2);
        assert_eq!(model.classes[0].0, 0);
        assert_eq!(model.classes[1].0, 1);
    }

    #[test]
    fn fit_rejects_small_class() {
        let (samples, mut labels) = two_class_orthonormal();
        for l in labels.iter_mut().take(22) {
            *l = 0; // class 1 shrinks to 2 samples, below q = 3
        }
        assert!(matches!(
            fit(samples.view(), &labels, &tiny_cfg(), Kernel::Linear),
            Err(ClassifierError::ClassTooSmall { label: 1, .. })
        ));
    }

    #[test]
    fn predict_separates_orthogonal_subspaces() {
        let (samples, labels) = two_class_orthonormal();
        let cfg = tiny_cfg();
        let model = fit(samples.view(), &labels, &cfg, Kernel::Linear).unwrap();
        // a vector purely on the first block must be class 0 (zero error)
        let x = Array1::from(vec![0.4, 0.8, 0.1, 0.0, 0.0, 0.0]);
        assert_eq!(predict(&model, x.view(), cfg.sparsity).unwrap(), 0);
        let y = Array1::from(vec![0.0, 0.0, 0.0, 0.3, 0.6, 0.9]);
        assert_eq!(predict(&model, y.view(), cfg.sparsity).unwrap(), 1);
    }

    #[test]
    fn single_class_model_always_answers_that_class() {
        let (samples, _) = two_class_orthonormal();
        let labels = vec![7usize; samples.ncols()];
        let cfg = tiny_cfg();
        let model = fit(samples.view(), &labels, &cfg, Kernel::Linear).unwrap();
        let x = Array1::from(vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(predict(&model, x.view(), cfg.sparsity).unwrap(), 7);
    }

    #[test]
    fn predict_is_invariant_under_class_normalization() {
        let (samples, labels) = two_class_orthonormal();
        let cfg = tiny_cfg();
        let model = fit(samples.view(), &labels, &cfg, Kernel::Linear).unwrap();
        let mut rescaled = model.clone();
        rescaled.classes[0].1.normalize().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for _ in 0..40 {
            let x = Array1::from_shape_fn(6, |_| rng.random::<f64>() * 2.0 - 1.0);
            let a = predict(&model, x.view(), cfg.sparsity).unwrap();
            let b = predict(&rescaled, x.view(), cfg.sparsity).unwrap();
            assert_eq!(a, b, "normalizing a class profile flipped a prediction");
        }
    }

    #[test]
    fn corrupt_missing_counts_are_exact() {
        let x = Array1::from((0..10).map(|i| i as f64 + 1.0).collect::<Vec<_>>());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let same = corrupt_missing(x.view(), 0.0, &mut rng).unwrap();
        assert_eq!(same, x);
        let gone = corrupt_missing(x.view(), 1.0, &mut rng).unwrap();
        assert!(gone.iter().all(|v| *v == 0.0));
        let half = corrupt_missing(x.view(), 0.5, &mut rng).unwrap();
        assert_eq!(half.iter().filter(|v| **v == 0.0).count(), 5);
        assert!(corrupt_missing(x.view(), 1.5, &mut rng).is_err());
    }

    #[test]
    fn stratified_folds_partition_each_class() {
        let labels: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let folds = stratified_folds(&labels, 5, 9).unwrap();
        let mut seen = vec![0usize; 30];
        for fold in &folds {
            for &j in fold {
                seen[j] += 1;
            }
            // each fold holds 2 samples of each class
            for c in 0..3 {
                assert_eq!(fold.iter().filter(|&&j| labels[j] == c).count(), 2);
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
        // deterministic in the seed
        assert_eq!(folds, stratified_folds(&labels, 5, 9).unwrap());
        assert_ne!(folds, stratified_folds(&labels, 5, 10).unwrap());
    }

    #[test]
    fn stratified_folds_reject_small_classes() {
        let labels = vec![0, 0, 0, 1, 1];
        assert!(matches!(
            stratified_folds(&labels, 3, 1),
            Err(ClassifierError::ClassTooSmall { label: 1, .. })
        ));
    }

    #[test]
    fn cross_validate_is_deterministic() {
        let (samples, labels) = two_class_orthonormal();
        let cfg = tiny_cfg();
        let a = cross_validate(samples.view(), &labels, 2, &cfg, Kernel::Linear).unwrap();
        let b = cross_validate(samples.view(), &labels, 2, &cfg, Kernel::Linear).unwrap();
        assert_eq!(a.mean.len(), b.mean.len());
        for (x, y) in a.mean.iter().zip(b.mean.iter()) {
            assert_eq!(x.batch_index, y.batch_index);
            assert_eq!(x.accuracy.to_bits(), y.accuracy.to_bits());
        }
    }

    #[test]
    fn cross_validate_separable_reaches_full_accuracy() {
        let (samples, labels) = two_class_orthonormal();
        let cfg = tiny_cfg();
        let report = cross_validate(samples.view(), &labels, 2, &cfg, Kernel::Linear).unwrap();
        let last = report.mean.last().unwrap();
        assert_eq!(last.accuracy, 1.0, "separable case must classify perfectly");
    }
}
