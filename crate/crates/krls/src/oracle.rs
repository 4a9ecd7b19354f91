//! Independent reference implementations used to verify the recursive paths
//! and to provide the batch training benchmark.
//!
//! Nothing here is fast and nothing here shares arithmetic with the
//! production code: [`batch_wls`] solves the weighted least-squares problem
//! directly from its definition, [`explicit_ormp`] runs matching pursuit on
//! actual feature-space vectors, and [`ExplicitDictionary`] materializes the
//! virtual dictionary `D = Φ Uᵀ` so the rank-`M` update identities can be
//! checked coordinate by coordinate.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::prelude::*;
use thiserror::Error;

use crate::kernels::{Kernel, KernelError};
use crate::kormp::{self, KormpError, SparseCode, DEGENERATE_REL, EARLY_STOP_REL};
use crate::linalg;
use crate::profile::{Profile, ProfileError};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("weighted covariance is singular")]
    SingularSystem,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("iteration count must be at least 1")]
    NoIterations,
    #[error("need at least {atoms} samples to seed a dictionary, got {samples}")]
    TooFewSamples { atoms: usize, samples: usize },
    #[error("explicit-space checks require a polynomial kernel")]
    UnsupportedKernel,
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Coding(#[from] KormpError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
}

/// The `(C, U, Ψ)` triple of a weighted least-squares dictionary solve.
pub type WlsSolution = (Array2<f64>, Array2<f64>, Array2<f64>);

/// Direct (non-recursive) weighted least-squares solution:
/// `C = (WΛWᵀ + ξI)⁻¹`, `U = CWΛ`, `Ψ = UKUᵀ`.
pub fn batch_wls(
    w: ArrayView2<f64>,
    lam: ArrayView1<f64>,
    xi: f64,
    k: ArrayView2<f64>,
) -> Result<WlsSolution, OracleError> {
    let (q, l) = (w.nrows(), w.ncols());
    if lam.len() != l || k.nrows() != l || k.ncols() != l {
        return Err(OracleError::Dimension(format!(
            "W is {q}x{l} but lam has {} entries and K is {}x{}",
            lam.len(),
            k.nrows(),
            k.ncols()
        )));
    }
    if !(xi > 0.0 && xi.is_finite()) {
        return Err(OracleError::Dimension(format!(
            "xi must be positive, got {xi}"
        )));
    }
    let mut wl = w.to_owned();
    for (mut col, &lj) in wl.axis_iter_mut(Axis(1)).zip(lam.iter()) {
        col *= lj;
    }
    let mut a = wl.dot(&w.t());
    linalg::symmetrize(&mut a);
    for j in 0..q {
        a[(j, j)] += xi;
    }
    let c = linalg::spd_inverse(a.view(), 1e-14, 1e15).ok_or(OracleError::SingularSystem)?;
    let u = c.dot(&wl);
    let mut psi = u.dot(&k).dot(&u.t());
    linalg::symmetrize(&mut psi);
    Ok((c, u, psi))
}

/// The virtual dictionary made concrete: `Φ` holds the mapped samples and
/// `D = Φ Uᵀ` the atoms, both in the explicit polynomial feature space.
#[derive(Debug, Clone)]
pub struct ExplicitDictionary {
    pub d: Array2<f64>,
    pub phi: Array2<f64>,
}

impl ExplicitDictionary {
    pub fn from_profile(p: &Profile) -> Result<Self, OracleError> {
        let phi = map_columns(p.kernel(), p.samples())?;
        let d = phi.dot(&p.atom_coefficients().t());
        Ok(ExplicitDictionary { d, phi })
    }
}

/// Map every column of `x` through the explicit polynomial feature map.
pub fn map_columns(kernel: Kernel, x: ArrayView2<f64>) -> Result<Array2<f64>, OracleError> {
    if !matches!(kernel, Kernel::Polynomial { .. }) {
        return Err(OracleError::UnsupportedKernel);
    }
    let f = kernel.feature_dim(x.nrows())?;
    let mut phi = Array2::<f64>::zeros((f, x.ncols()));
    for (j, col) in x.axis_iter(Axis(1)).enumerate() {
        phi.column_mut(j).assign(&kernel.explicit_map(col)?);
    }
    Ok(phi)
}

/// Order recursive matching pursuit on explicit vectors.
///
/// Same selection rule, tie-breaking, and stopping thresholds as
/// [`kormp::solve`], but every quantity (residuals, orthogonalized atoms,
/// final least-squares coefficients) is computed from the vectors
/// themselves, making this the signal-domain reference the Gram-domain
/// solver is tested against.
pub fn explicit_ormp(
    d: ArrayView2<f64>,
    phi: ArrayView1<f64>,
    s: usize,
) -> Result<SparseCode, OracleError> {
    let (f, q) = (d.nrows(), d.ncols());
    if phi.len() != f {
        return Err(OracleError::Dimension(format!(
            "signal has {} entries for {f}-dimensional atoms",
            phi.len()
        )));
    }
    if s == 0 || s > q {
        return Err(OracleError::Coding(KormpError::SparsityOutOfRange {
            sparsity: s,
            atoms: q,
        }));
    }
    let norms2: Vec<f64> = (0..q).map(|j| d.column(j).dot(&d.column(j))).collect();
    let max_n2 = norms2.iter().fold(0.0f64, |m, &v| m.max(v));
    let sigma2 = phi.dot(&phi);
    if max_n2 <= 0.0 {
        return Ok(SparseCode::new(Vec::new(), Vec::new(), sigma2, q));
    }
    let skip_tol = DEGENERATE_REL * max_n2;

    let mut residual = phi.to_owned();
    let mut res2 = sigma2;
    let mut perp: Vec<Array1<f64>> = (0..q).map(|j| d.column(j).to_owned()).collect();
    let mut chosen = vec![false; q];
    let mut support: Vec<usize> = Vec::with_capacity(s);

    while support.len() < s {
        if res2 <= EARLY_STOP_REL * sigma2 {
            break;
        }
        let mut best: Option<(usize, f64)> = None;
        for j in 0..q {
            if chosen[j] {
                continue;
            }
            let e = perp[j].dot(&perp[j]);
            if e <= skip_tol {
                continue;
            }
            let c = residual.dot(&d.column(j));
            let score = c * c / e;
            if best.is_none_or(|(_, b)| score > b) {
                best = Some((j, score));
            }
        }
        let Some((jstar, _)) = best else { break };
        chosen[jstar] = true;
        support.push(jstar);
        let e = perp[jstar].dot(&perp[jstar]);
        let basis = &perp[jstar] / e.sqrt();
        let proj = residual.dot(&basis);
        residual -= &(&basis * proj);
        res2 = residual.dot(&residual);
        for j in 0..q {
            if !chosen[j] {
                let t = perp[j].dot(&basis);
                perp[j] -= &(&basis * t);
            }
        }
    }

    // Least squares on the support via plain normal equations and Gaussian
    // elimination, independent of the incremental factorization path.
    let t = support.len();
    let coeffs = if t == 0 {
        Vec::new()
    } else {
        let mut gram = Array2::<f64>::zeros((t, t));
        let mut rhs = Array1::<f64>::zeros(t);
        for (a, &i) in support.iter().enumerate() {
            for (b, &j) in support.iter().enumerate() {
                gram[(a, b)] = d.column(i).dot(&d.column(j));
            }
            rhs[a] = d.column(i).dot(&phi);
        }
        linalg::solve_gauss(gram.view(), rhs.view())
            .ok_or(OracleError::SingularSystem)?
            .to_vec()
    };
    Ok(SparseCode::new(support, coeffs, res2, q))
}

/// Per-iteration diagnostics of [`batch_kmod`]. The regularized objective
/// `Σ‖φ_l − D w_l‖² + γ‖D‖²_F` is the quantity the dictionary update
/// provably never increases.
#[derive(Debug, Clone)]
pub struct KmodTrace {
    pub error_after_coding: Vec<f64>,
    pub error_after_update: Vec<f64>,
    pub objective_after_coding: Vec<f64>,
    pub objective_after_update: Vec<f64>,
}

/// Batch kernel dictionary learning: alternate sparse coding of every sample
/// with the direct [`batch_wls`] dictionary update, rescaling to unit-norm
/// atoms after each update.
///
/// The dictionary is seeded from `q` samples drawn at random from the
/// training set. Returns the final state as a [`Profile`] over all samples
/// (unit weights, `ξ = γ`) together with the per-iteration error trace.
pub fn batch_kmod(
    x: ArrayView2<f64>,
    kernel: Kernel,
    q: usize,
    s: usize,
    gamma: f64,
    iters: usize,
    rng: &mut impl Rng,
) -> Result<(Profile, KmodTrace), OracleError> {
    if iters == 0 {
        return Err(OracleError::NoIterations);
    }
    let l_tot = x.ncols();
    if l_tot < q {
        return Err(OracleError::TooFewSamples {
            atoms: q,
            samples: l_tot,
        });
    }
    let k = kernel.cross_gram(x, x)?;
    let diag_max = k.diag().iter().fold(0.0f64, |m, &v| m.max(v));
    let usable: Vec<usize> = (0..l_tot)
        .filter(|&j| k[(j, j)] > 1e-12 * diag_max.max(f64::MIN_POSITIVE))
        .collect();
    if usable.len() < q {
        return Err(OracleError::TooFewSamples {
            atoms: q,
            samples: usable.len(),
        });
    }
    let picks = rand::seq::index::sample(rng, usable.len(), q);
    let mut u = Array2::<f64>::zeros((q, l_tot));
    for (row, pick) in picks.iter().enumerate() {
        let j = usable[pick];
        u[(row, j)] = 1.0 / k[(j, j)].sqrt();
    }
    let mut psi = u.dot(&k).dot(&u.t());
    linalg::symmetrize(&mut psi);
    let mut w = Array2::<f64>::zeros((q, l_tot));
    let mut c = Array2::<f64>::eye(q);

    let mut trace = KmodTrace {
        error_after_coding: Vec::with_capacity(iters),
        error_after_update: Vec::with_capacity(iters),
        objective_after_coding: Vec::with_capacity(iters),
        objective_after_update: Vec::with_capacity(iters),
    };

    let lam = Array1::<f64>::ones(l_tot);
    for _ in 0..iters {
        let h = u.dot(&k); // Q×L_tot
        for j in 0..l_tot {
            let code = kormp::solve(psi.view(), h.column(j), k[(j, j)], s)?;
            w.column_mut(j).assign(&code.dense());
        }
        let err = total_error(&k, &u, &psi, &w);
        trace.error_after_coding.push(err);
        trace
            .objective_after_coding
            .push(err + gamma * psi.diag().sum());

        let (c_new, u_new, psi_new) = batch_wls(w.view(), lam.view(), gamma, k.view())?;
        c = c_new;
        u = u_new;
        psi = psi_new;
        let err = total_error(&k, &u, &psi, &w);
        trace.error_after_update.push(err);
        trace
            .objective_after_update
            .push(err + gamma * psi.diag().sum());

        // unit-norm atoms; revive any that died during the update
        revive_dead_atoms(&mut u, &mut psi, &k);
        let mut scale = Array1::<f64>::zeros(q);
        for j in 0..q {
            scale[j] = psi[(j, j)].sqrt();
        }
        for i in 0..q {
            for j in 0..q {
                psi[(i, j)] /= scale[i] * scale[j];
                c[(i, j)] /= scale[i] * scale[j];
            }
            psi[(i, i)] = 1.0;
        }
        for (mut row, &si) in u.axis_iter_mut(Axis(0)).zip(scale.iter()) {
            row /= si;
        }
        for (mut row, &si) in w.axis_iter_mut(Axis(0)).zip(scale.iter()) {
            row *= si;
        }
    }

    let profile = Profile::from_parts(kernel, x.to_owned(), k, w, c, u, psi, lam, gamma, gamma)?;
    Ok((profile, trace))
}

/// `Σ_l ‖φ_l − D w_l‖²` evaluated through Gram quantities.
fn total_error(k: &Array2<f64>, u: &Array2<f64>, psi: &Array2<f64>, w: &Array2<f64>) -> f64 {
    let h = u.dot(k); // Q×L
    let mut total = 0.0;
    for j in 0..k.ncols() {
        let wj = w.column(j);
        total += k[(j, j)] - 2.0 * h.column(j).dot(&wj) + wj.dot(&psi.dot(&wj));
    }
    total
}

/// Replace atoms with near-zero norm by the most energetic stored sample.
fn revive_dead_atoms(u: &mut Array2<f64>, psi: &mut Array2<f64>, k: &Array2<f64>) {
    let q = u.nrows();
    let diag_max = psi.diag().iter().fold(0.0f64, |m, &v| m.max(v));
    let mut refreshed = false;
    for j in 0..q {
        if psi[(j, j)] > 1e-12 * diag_max.max(f64::MIN_POSITIVE) {
            continue;
        }
        // seed from the sample with the largest kernel energy; crude but
        // only reachable when a dictionary atom collapses entirely
        let (best, _) =
            k.diag().iter().enumerate().fold(
                (0, 0.0),
                |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc },
            );
        u.row_mut(j).fill(0.0);
        u[(j, best)] = 1.0 / k[(best, best)].sqrt();
        refreshed = true;
    }
    if refreshed {
        let mut new_psi = u.dot(k).dot(&u.t());
        linalg::symmetrize(&mut new_psi);
        *psi = new_psi;
    }
}

/// Verify the rank-`M` grow update of the explicit dictionary,
/// `D_next = D + r α uᵀ` with `r = φ(x) − D w`, against the dictionary
/// rebuilt from the grown profile. Returns the relative Frobenius deviation.
pub fn explicit_grow_check(
    before: &Profile,
    x: ArrayView2<f64>,
    w: ArrayView2<f64>,
    lambda: f64,
) -> Result<f64, OracleError> {
    let explicit = ExplicitDictionary::from_profile(before)?;
    let m = x.ncols();
    let u = before.inverse_covariance().dot(&w);
    let mut a = w.t().dot(&u);
    linalg::symmetrize(&mut a);
    for j in 0..m {
        a[(j, j)] += lambda;
    }
    let alpha = linalg::spd_inverse(a.view(), 1e-14, 1e15).ok_or(OracleError::SingularSystem)?;
    let phi_x = map_columns(before.kernel(), x)?;
    let r = &phi_x - &explicit.d.dot(&w);
    let predicted = &explicit.d + &r.dot(&alpha).dot(&u.t());

    let mut grown = before.clone();
    grown.grow(x, w, lambda)?;
    let actual = ExplicitDictionary::from_profile(&grown)?;
    Ok(linalg::rel_frobenius(actual.d.view(), predicted.view()))
}

/// Verify the rank-`M` prune update `D̂ = D − r_m α_m u_mᵀ` with
/// `r_m = φ_m − D w_m` against the dictionary rebuilt from the pruned
/// profile. Returns the relative Frobenius deviation.
pub fn explicit_prune_check(before: &Profile, indices: &[usize]) -> Result<f64, OracleError> {
    let explicit = ExplicitDictionary::from_profile(before)?;
    let mut idx = indices.to_vec();
    idx.sort_unstable();
    let w_m = before.codes().select(Axis(1), &idx);
    let u_m = before.inverse_covariance().dot(&w_m);
    let mut a = -w_m.t().dot(&u_m);
    linalg::symmetrize(&mut a);
    for (row, &j) in idx.iter().enumerate() {
        a[(row, row)] += 1.0 / before.weights()[j];
    }
    let alpha = linalg::spd_inverse(a.view(), 1e-14, 1e15).ok_or(OracleError::SingularSystem)?;
    let phi_m = explicit.phi.select(Axis(1), &idx);
    let r_m = &phi_m - &explicit.d.dot(&w_m);
    let predicted = &explicit.d - &r_m.dot(&alpha).dot(&u_m.t());

    let mut pruned = before.clone();
    pruned.prune(&idx)?;
    let actual = ExplicitDictionary::from_profile(&pruned)?;
    Ok(linalg::rel_frobenius(actual.d.view(), predicted.view()))
}
