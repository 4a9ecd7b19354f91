//! The online training loop: coherence gating of incoming samples, sparse
//! coding, profile growing with a scheduled forgetting factor, size-triggered
//! pruning of low-contribution samples, and periodic renormalization.

use std::time::Instant;

use ndarray::{s, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernels::{Kernel, KernelError};
use crate::kormp;
use crate::profile::{Profile, ProfileError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("need at least {needed} samples to initialize, got {got}")]
    NotEnoughSamples { needed: usize, got: usize },
    #[error("candidate pool too small: profile of {l} cannot yield {count} prune candidates")]
    CandidatePoolTooSmall { l: usize, count: usize },
    #[error("only {found} of {needed} requested prune candidates satisfy the removal conditions")]
    InsufficientPruneCandidates { needed: usize, found: usize },
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Coding(#[from] kormp::KormpError),
}

/// Training hyperparameters. The defaults are the ones used throughout the
/// evaluation harness: 30 atoms, a 200-sample profile cap, mini-batches of
/// 10, `γ = 0.1`, sparsity 5, and a forgetting factor ramping linearly from
/// 0.98 to 1 over the first 80% of batches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainerConfig {
    /// Number of dictionary atoms `Q`.
    pub q: usize,
    /// Profile size cap `L_max`.
    pub l_max: usize,
    /// Mini-batch size `M` for both growing and pruning.
    pub batch_size: usize,
    /// Regularization weight `γ`.
    pub gamma: f64,
    /// Coherence threshold in (0, 1]; a sample is informative only when its
    /// maximal normalized kernel similarity to the stored samples stays below
    /// this value.
    pub delta: f64,
    /// Sparsity level `s` used for coding during training.
    pub sparsity: usize,
    /// Forgetting factor at the first batch.
    pub lambda0: f64,
    /// Fraction of total batches over which the forgetting factor ramps to 1.
    pub ramp_fraction: f64,
    /// Number of passes over the stream.
    pub epochs: usize,
    /// Number of evenly spaced checkpoint callbacks.
    pub checkpoint_count: usize,
    /// Maximum deviation of `diag(Ψ)` from 1 tolerated before rescaling.
    pub normalize_tol: f64,
    /// Seed for every randomized choice made around the trainer
    /// (fold assignment, corruption masks, benchmark data).
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            q: 30,
            l_max: 200,
            batch_size: 10,
            gamma: 0.1,
            delta: 0.99,
            sparsity: 5,
            lambda0: 0.98,
            ramp_fraction: 0.8,
            epochs: 1,
            checkpoint_count: 20,
            normalize_tol: 0.1,
            seed: 0,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |msg: String| Err(TrainError::BadConfig(msg));
        if self.sparsity == 0 || self.sparsity >= self.q {
            return fail(format!(
                "sparsity must satisfy 1 <= s < Q, got s={} Q={}",
                self.sparsity, self.q
            ));
        }
        if self.q > self.l_max {
            return fail(format!("Q={} exceeds L_max={}", self.q, self.l_max));
        }
        if self.batch_size == 0 || self.batch_size > self.q {
            return fail(format!(
                "batch size must satisfy 1 <= M <= Q, got M={} Q={}",
                self.batch_size, self.q
            ));
        }
        if !(self.lambda0 > 0.0 && self.lambda0 <= 1.0) {
            return fail(format!("lambda0 must lie in (0, 1], got {}", self.lambda0));
        }
        if !(0.0..=1.0).contains(&self.ramp_fraction) {
            return fail(format!(
                "ramp fraction must lie in [0, 1], got {}",
                self.ramp_fraction
            ));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return fail(format!("gamma must be positive, got {}", self.gamma));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return fail(format!("delta must lie in (0, 1], got {}", self.delta));
        }
        if self.epochs == 0 {
            return fail("epochs must be at least 1".into());
        }
        if self.checkpoint_count == 0 {
            return fail("checkpoint count must be at least 1".into());
        }
        if self.normalize_tol.is_nan() || self.normalize_tol <= 0.0 {
            return fail(format!(
                "normalize tolerance must be positive, got {}",
                self.normalize_tol
            ));
        }
        Ok(())
    }
}

/// Forgetting factor for a given batch: a linear ramp from `lambda0` at batch
/// 0 to 1.0 at `⌊ramp_fraction · total⌋`, constant 1.0 afterwards.
pub fn forgetting_factor(cfg: &TrainerConfig, batch_index: usize, total_batches: usize) -> f64 {
    let ramp_len = (cfg.ramp_fraction * total_batches as f64).floor() as usize;
    if ramp_len == 0 || batch_index >= ramp_len {
        return 1.0;
    }
    cfg.lambda0 + (1.0 - cfg.lambda0) * (batch_index as f64 / ramp_len as f64)
}

/// Coherence gate: `x` is informative iff
/// `max_j |k_j / √(σ² K_jj)| < delta`. Samples with zero kernel energy are
/// never informative.
pub fn is_informative(
    profile: &Profile,
    x: ArrayView1<f64>,
    delta: f64,
) -> Result<bool, TrainError> {
    let kernel = profile.kernel();
    let sigma2 = kernel.eval(x, x)?;
    if sigma2 <= 0.0 {
        return Ok(false);
    }
    let col = x.insert_axis(Axis(1));
    let kvec = kernel.cross_gram(profile.samples(), col)?;
    let k = profile.kernel_matrix();
    let diag = k.diag();
    let mut max_coh = 0.0f64;
    for (kj, &kjj) in kvec.column(0).iter().zip(diag.iter()) {
        if kjj <= 0.0 {
            continue; // degenerate stored sample carries no coherence
        }
        let c = (kj / (sigma2 * kjj).sqrt()).abs();
        max_coh = max_coh.max(c);
    }
    Ok(max_coh < delta)
}

/// Pick `count` removal candidates by ascending contribution score, scanning
/// the first half of the profile first (oldest samples), extending to the
/// rest (minus the newest `count`) only if the first half cannot supply
/// enough candidates that satisfy both removal conditions: a nonsingular
/// removal gain matrix and no zeroed code row.
pub fn select_prune_candidates(profile: &Profile, count: usize) -> Result<Vec<usize>, TrainError> {
    let l = profile.l();
    if count == 0 || l <= 2 * count {
        return Err(TrainError::CandidatePoolTooSmall { l, count });
    }
    let scores = profile.contribution_scores();
    let order_by_score = |pool: &mut Vec<usize>| {
        pool.sort_by(|&a, &b| {
            scores[a]
                .partial_cmp(&scores[b])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
    };

    let w = profile.codes();
    let q = profile.q();
    let nnz_row: Vec<usize> = (0..q)
        .map(|r| w.row(r).iter().filter(|v| **v != 0.0).count())
        .collect();

    let mut chosen: Vec<usize> = Vec::with_capacity(count);
    let mut nnz_in_chosen = vec![0usize; q];

    let try_pool = |pool: Vec<usize>, chosen: &mut Vec<usize>, nnz_in_chosen: &mut Vec<usize>| {
        for j in pool {
            if chosen.len() == count {
                break;
            }
            // condition (ii): no code row may lose its last nonzero
            let mut zeroes_row = false;
            for r in 0..q {
                if nnz_row[r] == 0 {
                    continue;
                }
                let extra = usize::from(w[(r, j)] != 0.0);
                if nnz_in_chosen[r] + extra == nnz_row[r] {
                    zeroes_row = true;
                    break;
                }
            }
            if zeroes_row {
                continue;
            }
            // condition (i): the removal gain stays invertible
            let mut tentative = chosen.clone();
            tentative.push(j);
            if !prune_gain_invertible(profile, &tentative) {
                continue;
            }
            for r in 0..q {
                nnz_in_chosen[r] += usize::from(w[(r, j)] != 0.0);
            }
            chosen.push(j);
        }
    };

    let mut first_half: Vec<usize> = (0..l / 2).collect();
    order_by_score(&mut first_half);
    try_pool(first_half, &mut chosen, &mut nnz_in_chosen);

    if chosen.len() < count {
        // fallback: widen to everything except the newest `count` samples
        let mut rest: Vec<usize> = (l / 2..l.saturating_sub(count))
            .filter(|j| !chosen.contains(j))
            .collect();
        order_by_score(&mut rest);
        try_pool(rest, &mut chosen, &mut nnz_in_chosen);
    }

    if chosen.len() < count {
        return Err(TrainError::InsufficientPruneCandidates {
            needed: count,
            found: chosen.len(),
        });
    }
    chosen.sort_unstable();
    Ok(chosen)
}

fn prune_gain_invertible(profile: &Profile, indices: &[usize]) -> bool {
    let w_m = profile.codes().select(Axis(1), indices);
    let u_m = profile.inverse_covariance().dot(&w_m);
    let m = indices.len();
    if m == 1 {
        let denom = 1.0 / profile.weights()[indices[0]] - w_m.column(0).dot(&u_m.column(0));
        let scale = (1.0 / profile.weights()[indices[0]]).max(denom.abs());
        return denom.is_finite() && denom > 1e-12 * scale;
    }
    let mut a = -w_m.t().dot(&u_m);
    crate::linalg::symmetrize(&mut a);
    for (row, &j) in indices.iter().enumerate() {
        a[(row, row)] += 1.0 / profile.weights()[j];
    }
    crate::linalg::spd_inverse(a.view(), 1e-12, 1e12).is_some()
}

/// Snapshot handed to the checkpoint callback: the profile as of the just
/// finished batch plus cumulative wall-clock time spent in the two training
/// phases (coding + growing, pruning + normalization).
pub struct Checkpoint<'a> {
    pub batch_index: usize,
    pub total_batches: usize,
    pub profile: &'a Profile,
    pub grow_ms: f64,
    pub prune_ms: f64,
}

/// Evenly spaced checkpoint batch indices, always ending at the last batch.
pub fn checkpoint_indices(total_batches: usize, count: usize) -> Vec<usize> {
    if total_batches == 0 || count == 0 {
        return Vec::new();
    }
    let mut out: Vec<usize> = (1..=count)
        .map(|t| (t * total_batches).div_ceil(count) - 1)
        .collect();
    out.dedup();
    out
}

/// Run the online learner over the columns of `data`.
///
/// The first `Q` columns initialize the profile; the rest are consumed in
/// mini-batches of `cfg.batch_size`, each pass repeated `cfg.epochs` times.
/// Per batch: non-informative samples are dropped individually, survivors
/// are sparse-coded and grown into the profile with the scheduled forgetting
/// factor, the profile is pruned back to `L_max − M` whenever it exceeds
/// `L_max`, and normalization runs after a prune when `diag(Ψ)` has drifted
/// more than `cfg.normalize_tol` from 1. A rejected grow or prune skips that
/// batch and leaves the profile valid.
pub fn train_online<F>(
    data: ArrayView2<f64>,
    cfg: &TrainerConfig,
    kernel: Kernel,
    mut on_checkpoint: F,
) -> Result<Profile, TrainError>
where
    F: FnMut(Checkpoint<'_>),
{
    cfg.validate()?;
    let l_tot = data.ncols();
    if l_tot < cfg.q {
        return Err(TrainError::NotEnoughSamples {
            needed: cfg.q,
            got: l_tot,
        });
    }
    let mut profile = Profile::init(data.slice(s![.., ..cfg.q]), kernel, cfg.gamma)?;

    let per_epoch = (l_tot - cfg.q).div_ceil(cfg.batch_size);
    let total_batches = cfg.epochs * per_epoch;
    let checkpoints = checkpoint_indices(total_batches, cfg.checkpoint_count);
    let mut next_checkpoint = 0usize;
    let mut grow_ms = 0.0f64;
    let mut prune_ms = 0.0f64;
    let mut batch_index = 0usize;

    for _epoch in 0..cfg.epochs {
        let mut start = cfg.q;
        while start < l_tot {
            let stop = (start + cfg.batch_size).min(l_tot);
            let batch = data.slice(s![.., start..stop]);
            let lambda = forgetting_factor(cfg, batch_index, total_batches);

            let grow_timer = Instant::now();
            let mut keep: Vec<usize> = Vec::with_capacity(batch.ncols());
            for j in 0..batch.ncols() {
                if is_informative(&profile, batch.column(j), cfg.delta)? {
                    keep.push(j);
                }
            }
            if !keep.is_empty() {
                let xb = batch.select(Axis(1), &keep);
                let inputs = profile.code_inputs(xb.view())?;
                let mut codes = Array2::<f64>::zeros((cfg.q, keep.len()));
                for j in 0..keep.len() {
                    let code = kormp::solve(
                        profile.gram(),
                        inputs.h.column(j),
                        inputs.sigma2[(j, j)],
                        cfg.sparsity,
                    )?;
                    codes.column_mut(j).assign(&code.dense());
                }
                match profile.grow(xb.view(), codes.view(), lambda) {
                    Ok(()) => {}
                    Err(ProfileError::GrowRejected) => {
                        log::warn!("batch {batch_index}: grow rejected, dropping mini-batch");
                    }
                    Err(e) => return Err(e.into()),
                }
            }
            grow_ms += grow_timer.elapsed().as_secs_f64() * 1e3;

            let prune_timer = Instant::now();
            if profile.l() > cfg.l_max {
                let target = cfg.l_max - cfg.batch_size;
                let count = (profile.l() - target).min(profile.l() - cfg.q);
                if count > 0 {
                    match select_prune_candidates(&profile, count) {
                        Ok(indices) => match profile.prune(&indices) {
                            Ok(()) => {
                                profile.refresh_psi();
                                let drift = profile
                                    .gram()
                                    .diag()
                                    .iter()
                                    .fold(0.0f64, |m, &d| m.max((d - 1.0).abs()));
                                if drift > cfg.normalize_tol {
                                    profile.normalize()?;
                                }
                            }
                            Err(
                                e @ (ProfileError::PruneSingular | ProfileError::PruneZeroRow(_)),
                            ) => {
                                log::warn!("batch {batch_index}: prune rejected ({e}), skipping");
                            }
                            Err(e) => return Err(e.into()),
                        },
                        Err(e @ TrainError::InsufficientPruneCandidates { .. }) => {
                            log::warn!("batch {batch_index}: {e}; skipping prune");
                        }
                        Err(e) => return Err(e),
                    }
                }
            }
            prune_ms += prune_timer.elapsed().as_secs_f64() * 1e3;

            if next_checkpoint < checkpoints.len() && checkpoints[next_checkpoint] == batch_index {
                on_checkpoint(Checkpoint {
                    batch_index,
                    total_batches,
                    profile: &profile,
                    grow_ms,
                    prune_ms,
                });
                next_checkpoint += 1;
            }
            batch_index += 1;
            start = stop;
        }
    }
    Ok(profile)
}
