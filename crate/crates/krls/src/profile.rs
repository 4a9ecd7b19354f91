//! The online dictionary state and its exact recursive updates.
//!
//! A [`Profile`] holds the retained samples `X`, their kernel matrix `K`,
//! their sparse codes `W`, the per-sample weights `λ` with the running
//! regularizer `ξ`, and three derived matrices:
//!
//! * `C = (W Λ Wᵀ + ξI)⁻¹`, the inverse of the weighted code covariance,
//! * `U = C W Λ`, the coefficients expressing each dictionary atom as a
//!   linear combination of the mapped samples,
//! * `Ψ = U K Uᵀ`, the Gram matrix of the (never materialized) dictionary.
//!
//! Together `(X, U)` represent the virtual feature-space dictionary
//! `D = Φ Uᵀ`, where `Φ` is the column-wise image of `X` under the feature
//! map. Growing and pruning update all of these with rank-`M` corrections via
//! the matrix inversion lemma instead of re-solving the weighted
//! least-squares problem, which drops the per-step cost to `O(L²)` for
//! single-sample batches. The identities the update formulas must satisfy
//! are enforced by [`Profile::validate`] and cross-checked against the
//! direct solver in [`crate::oracle::batch_wls`] by the test suites.

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernels::{Kernel, KernelError};
use crate::kormp::{self, KormpError, SparseCode};
use crate::linalg;

/// Condition-estimate ceiling for the small gain-matrix inversions.
const MAX_ALPHA_COND: f64 = 1e12;
/// Relative pivot floor for the same inversions.
const ALPHA_REL_TOL: f64 = 1e-12;
/// Diagonal entries of `Ψ` below this are degenerate atoms.
const DEGENERATE_PSI: f64 = 1e-14;

const SYMMETRY_TOL: f64 = 1e-10;
const CONSISTENCY_TOL: f64 = 1e-7;
const U_TOL: f64 = 1e-8;
const PSI_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("initial sample block must be non-empty")]
    EmptyInit,
    #[error("gamma must be finite and > 0, got {0}")]
    BadGamma(f64),
    #[error("forgetting factor must lie in (0, 1], got {0}")]
    BadLambda(f64),
    #[error("sample dimension {got} does not match profile dimension {expected}")]
    SampleDimension { expected: usize, got: usize },
    #[error("code block is {got_rows}x{got_cols}, expected {rows}x{cols}")]
    CodeShape {
        rows: usize,
        cols: usize,
        got_rows: usize,
        got_cols: usize,
    },
    #[error("mini-batch of {batch} samples exceeds the {atoms}-atom rank bound")]
    BatchTooLarge { batch: usize, atoms: usize },
    #[error("grow rejected: gain matrix is numerically singular")]
    GrowRejected,
    #[error("prune rejected: removal gain matrix is numerically singular")]
    PruneSingular,
    #[error("prune rejected: removal would zero out row {0} of the code matrix")]
    PruneZeroRow(usize),
    #[error("prune rejected: profile of {l} samples cannot drop below {q} atoms")]
    PruneFloor { l: usize, q: usize },
    #[error("prune indices must be distinct and within the profile")]
    BadPruneIndices,
    #[error("atom {0} has near-zero norm; profile cannot be normalized")]
    DegenerateAtom(usize),
    #[error("profile invariant violated: {0}")]
    InvariantViolation(String),
    #[error("unsupported snapshot version {0}")]
    SnapshotVersion(u32),
    #[error("malformed snapshot: {0}")]
    SnapshotFormat(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Coding(#[from] KormpError),
}

/// Everything the sparse coder needs for a mini-batch of `M` fresh samples.
#[derive(Debug, Clone)]
pub struct CodeInputs {
    /// `U·k`: atom/sample inner products, one column per sample (`Q×M`).
    pub h: Array2<f64>,
    /// Kernel matrix of the batch against itself (`M×M`); its diagonal holds
    /// the per-sample energies `σ² = k(x, x)`.
    pub sigma2: Array2<f64>,
    /// Kernel evaluations of the stored samples against the batch (`L×M`).
    pub kvec: Array2<f64>,
}

/// The complete online dictionary state. See the module docs for the roles
/// of the individual matrices.
#[derive(Debug, Clone)]
pub struct Profile {
    kernel: Kernel,
    x: Array2<f64>,   // N×L
    k: Array2<f64>,   // L×L
    w: Array2<f64>,   // Q×L
    c: Array2<f64>,   // Q×Q
    u: Array2<f64>,   // Q×L
    psi: Array2<f64>, // Q×Q
    lam: Array1<f64>, // L
    xi: f64,
    gamma: f64,
}

impl Profile {
    /// Start a profile from `Q` initial samples (the columns of `x0`).
    ///
    /// The initial codes are the identity (each initial sample doubles as
    /// one dictionary atom) and `C`, `U`, `Ψ` are set to the exact weighted
    /// least-squares solution of that state: `C = U = (1 + γ)⁻¹ I` and
    /// `Ψ = (1 + γ)⁻² K`. All weights start at 1 and `ξ = γ`.
    pub fn init(x0: ArrayView2<f64>, kernel: Kernel, gamma: f64) -> Result<Self, ProfileError> {
        if x0.ncols() == 0 || x0.nrows() == 0 {
            return Err(ProfileError::EmptyInit);
        }
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(ProfileError::BadGamma(gamma));
        }
        kernel.validate()?;
        let q = x0.ncols();
        let k = kernel.cross_gram(x0, x0)?;
        let scale = 1.0 / (1.0 + gamma);
        let c = Array2::<f64>::eye(q) * scale;
        let u = c.clone();
        let psi = &k * (scale * scale);
        Ok(Profile {
            kernel,
            x: x0.to_owned(),
            k,
            w: Array2::eye(q),
            c,
            u,
            psi,
            lam: Array1::ones(q),
            xi: gamma,
            gamma,
        })
    }

    /// Assemble a profile directly from its parts, validating the invariants.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn from_parts(
        kernel: Kernel,
        x: Array2<f64>,
        k: Array2<f64>,
        w: Array2<f64>,
        c: Array2<f64>,
        u: Array2<f64>,
        psi: Array2<f64>,
        lam: Array1<f64>,
        xi: f64,
        gamma: f64,
    ) -> Result<Self, ProfileError> {
        let p = Profile {
            kernel,
            x,
            k,
            w,
            c,
            u,
            psi,
            lam,
            xi,
            gamma,
        };
        p.validate()?;
        Ok(p)
    }

    /// Number of dictionary atoms.
    pub fn q(&self) -> usize {
        self.w.nrows()
    }

    /// Number of retained samples.
    pub fn l(&self) -> usize {
        self.x.ncols()
    }

    /// Input dimension.
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn kernel(&self) -> Kernel {
        self.kernel
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Running regularizer `ξ = γ · Π λ` over all grow steps.
    pub fn xi(&self) -> f64 {
        self.xi
    }

    pub fn samples(&self) -> ArrayView2<'_, f64> {
        self.x.view()
    }

    pub fn kernel_matrix(&self) -> ArrayView2<'_, f64> {
        self.k.view()
    }

    pub fn codes(&self) -> ArrayView2<'_, f64> {
        self.w.view()
    }

    pub fn inverse_covariance(&self) -> ArrayView2<'_, f64> {
        self.c.view()
    }

    pub fn atom_coefficients(&self) -> ArrayView2<'_, f64> {
        self.u.view()
    }

    pub fn gram(&self) -> ArrayView2<'_, f64> {
        self.psi.view()
    }

    pub fn weights(&self) -> ArrayView1<'_, f64> {
        self.lam.view()
    }

    /// Kernel quantities needed to sparse-code the columns of `x` against
    /// this profile: feeding `(Ψ, h_col_j, σ²_jj)` to [`kormp::solve`] codes
    /// sample `j`.
    pub fn code_inputs(&self, x: ArrayView2<f64>) -> Result<CodeInputs, ProfileError> {
        if x.nrows() != self.n() {
            return Err(ProfileError::SampleDimension {
                expected: self.n(),
                got: x.nrows(),
            });
        }
        let kvec = self.kernel.cross_gram(self.x.view(), x)?;
        let h = self.u.dot(&kvec);
        let sigma2 = self.kernel.cross_gram(x, x)?;
        Ok(CodeInputs { h, sigma2, kvec })
    }

    /// Sparse-code a single sample with sparsity `s`.
    pub fn code(&self, x: ArrayView1<f64>, s: usize) -> Result<SparseCode, ProfileError> {
        let col = x.insert_axis(Axis(1));
        let ci = self.code_inputs(col)?;
        Ok(kormp::solve(
            self.psi.view(),
            ci.h.column(0),
            ci.sigma2[(0, 0)],
            s,
        )?)
    }

    /// Squared feature-space residual of the best `s`-sparse representation
    /// of `x` under this profile's dictionary.
    pub fn representation_error(&self, x: ArrayView1<f64>, s: usize) -> Result<f64, ProfileError> {
        Ok(self.code(x, s)?.sq_error())
    }

    /// Add a mini-batch of `M` samples with their codes, discounting all
    /// previous approximation errors by `lambda`.
    ///
    /// `w` must be the codes of `x` against the *current* profile. The
    /// update is rejected (leaving the profile untouched) when the `M×M`
    /// gain matrix `λI + wᵀCw` is numerically singular.
    pub fn grow(
        &mut self,
        x: ArrayView2<f64>,
        w: ArrayView2<f64>,
        lambda: f64,
    ) -> Result<(), ProfileError> {
        let m = x.ncols();
        let (q, l) = (self.q(), self.l());
        if x.nrows() != self.n() {
            return Err(ProfileError::SampleDimension {
                expected: self.n(),
                got: x.nrows(),
            });
        }
        if w.nrows() != q || w.ncols() != m {
            return Err(ProfileError::CodeShape {
                rows: q,
                cols: m,
                got_rows: w.nrows(),
                got_cols: w.ncols(),
            });
        }
        if m == 0 {
            return Ok(());
        }
        if m > q {
            return Err(ProfileError::BatchTooLarge { batch: m, atoms: q });
        }
        if !(lambda > 0.0 && lambda <= 1.0) {
            return Err(ProfileError::BadLambda(lambda));
        }
        if !w.iter().all(|v| v.is_finite()) {
            return Err(ProfileError::InvariantViolation(
                "non-finite code entry".into(),
            ));
        }

        let kvec = self.kernel.cross_gram(self.x.view(), x)?; // L×M
        let sig = self.kernel.cross_gram(x, x)?; // M×M

        let u = self.c.dot(&w); // Q×M
        let alpha = invert_grow_gain(&w, &u, lambda, m)?;

        // v = Λ Wᵀ u
        let mut v = self.w.t().dot(&u); // L×M
        for (mut row, &lam) in v.axis_iter_mut(Axis(0)).zip(self.lam.iter()) {
            row *= lam;
        }
        let k_v = self.k.dot(&v); // L×M
        let utilde = self.u.dot(&(&kvec - &k_v)); // Q×M

        // residual Gram: vᵀKv − vᵀk − kᵀv + σ²
        let vt_k = v.t().dot(&kvec);
        let mut beta = v.t().dot(&k_v) - &vt_k - vt_k.t() + &sig;
        linalg::symmetrize(&mut beta);

        let ua = u.dot(&alpha); // Q×M

        let mut psi = &self.psi + &ua.dot(&utilde.t()) + utilde.dot(&ua.t());
        psi += &ua.dot(&beta).dot(&ua.t());
        linalg::symmetrize(&mut psi);

        let mut c = (&self.c - &ua.dot(&u.t())) / lambda;
        linalg::symmetrize(&mut c);

        let u_left = &self.u - &ua.dot(&v.t());
        let u_new = concatenate![Axis(1), u_left.view(), ua.view()];

        let mut k_new = Array2::<f64>::zeros((l + m, l + m));
        k_new.slice_mut(s![..l, ..l]).assign(&self.k);
        k_new.slice_mut(s![..l, l..]).assign(&kvec);
        k_new.slice_mut(s![l.., ..l]).assign(&kvec.t());
        k_new.slice_mut(s![l.., l..]).assign(&sig);

        let mut lam_new = Array1::<f64>::ones(l + m);
        lam_new.slice_mut(s![..l]).assign(&(&self.lam * lambda));

        self.x = concatenate![Axis(1), self.x.view(), x];
        self.w = concatenate![Axis(1), self.w.view(), w];
        self.k = k_new;
        self.c = c;
        self.u = u_new;
        self.psi = psi;
        self.lam = lam_new;
        self.xi *= lambda;
        Ok(())
    }

    /// Remove the samples at the given indices, first canceling their effect
    /// on `C`, `U`, and `Ψ` and then dropping their columns and rows.
    ///
    /// `ξ` is unchanged: the regularizer tracks the samples that ever entered
    /// the profile, not the ones still in it. Rejected (leaving the profile
    /// untouched) when the removal gain matrix is numerically singular or
    /// when the removal would zero out a code-matrix row.
    pub fn prune(&mut self, indices: &[usize]) -> Result<(), ProfileError> {
        let (q, l) = (self.q(), self.l());
        let m = indices.len();
        if m == 0 {
            return Ok(());
        }
        let mut idx = indices.to_vec();
        idx.sort_unstable();
        idx.dedup();
        if idx.len() != m || *idx.last().unwrap() >= l {
            return Err(ProfileError::BadPruneIndices);
        }
        if l - m < q {
            return Err(ProfileError::PruneFloor { l, q });
        }

        // Condition (ii): every code row must keep a nonzero entry.
        let mut removed = vec![false; l];
        for &j in &idx {
            removed[j] = true;
        }
        for r in 0..q {
            let row = self.w.row(r);
            let total = row.iter().filter(|v| **v != 0.0).count();
            if total == 0 {
                continue;
            }
            let inside = idx.iter().filter(|&&j| row[j] != 0.0).count();
            if inside == total {
                return Err(ProfileError::PruneZeroRow(r));
            }
        }

        let w_m = self.w.select(Axis(1), &idx); // Q×M
        let lam_m: Vec<f64> = idx.iter().map(|&j| self.lam[j]).collect();
        let u_m = self.c.dot(&w_m); // Q×M

        // Condition (i): α_m = (Λ_m⁻¹ − w_mᵀ u_m)⁻¹ must exist.
        let alpha = invert_prune_gain(&w_m, &u_m, &lam_m, m)?;

        // v_m = Λ̂ Wᵀ u_m with the removed entries zeroed
        let mut v = self.w.t().dot(&u_m); // L×M
        for (j, mut row) in v.axis_iter_mut(Axis(0)).enumerate() {
            let scale = if removed[j] { 0.0 } else { self.lam[j] };
            row *= scale;
        }

        let k_m = self.k.select(Axis(1), &idx); // L×M
        let sig_m = k_m.select(Axis(0), &idx); // M×M (= K[m, m])
        let k_v = self.k.dot(&v); // L×M

        // û_m = U (k_m Λ_m − K v_m α_m)
        let mut k_m_lam = k_m.clone();
        for (mut col, &lm) in k_m_lam.axis_iter_mut(Axis(1)).zip(lam_m.iter()) {
            col *= lm;
        }
        let uhat = self.u.dot(&(&k_m_lam - &k_v.dot(&alpha))); // Q×M

        // middle = Λ_m σ_m² Λ_m − Λ_m k_mᵀ v α − α vᵀ k_m Λ_m + α vᵀ K v α
        let lam_diag = Array2::from_diag(&Array1::from(lam_m.clone()));
        let kt_v = k_m.t().dot(&v); // M×M
        let term_a = lam_diag.dot(&sig_m).dot(&lam_diag);
        let term_b = lam_diag.dot(&kt_v).dot(&alpha);
        let term_c = alpha.dot(&v.t()).dot(&k_v).dot(&alpha);
        let mut middle = term_a - &term_b - term_b.t() + term_c;
        linalg::symmetrize(&mut middle);

        let cross = u_m.dot(&uhat.t());
        let mut psi = &self.psi - &cross - cross.t() + u_m.dot(&middle).dot(&u_m.t());
        linalg::symmetrize(&mut psi);

        let mut c = &self.c + &u_m.dot(&alpha).dot(&u_m.t());
        linalg::symmetrize(&mut c);

        // Û = U − U_{↓m} + u_m α v_mᵀ, then drop the removed columns.
        let mut u_hat_full = self.u.clone();
        for &j in &idx {
            u_hat_full.column_mut(j).fill(0.0);
        }
        u_hat_full += &u_m.dot(&alpha).dot(&v.t());

        let kept: Vec<usize> = (0..l).filter(|j| !removed[*j]).collect();
        self.x = self.x.select(Axis(1), &kept);
        self.w = self.w.select(Axis(1), &kept);
        self.u = u_hat_full.select(Axis(1), &kept);
        self.k = self.k.select(Axis(0), &kept).select(Axis(1), &kept);
        self.lam = Array1::from(kept.iter().map(|&j| self.lam[j]).collect::<Vec<_>>());
        self.c = c;
        self.psi = psi;
        Ok(())
    }

    /// Rescale so every dictionary atom has unit norm, i.e. `diag(Ψ) = 1`.
    ///
    /// With `S = diag(√Ψ_jj)` this maps `Ψ → S⁻¹ΨS⁻¹`, `U → S⁻¹U`,
    /// `C → S⁻¹CS⁻¹`, and `W → SW`, which leaves the reconstruction
    /// `D·W = Φ·(UᵀW)` unchanged.
    pub fn normalize(&mut self) -> Result<(), ProfileError> {
        let q = self.q();
        let mut scale = Array1::<f64>::zeros(q);
        for j in 0..q {
            let d = self.psi[(j, j)];
            if d <= DEGENERATE_PSI {
                return Err(ProfileError::DegenerateAtom(j));
            }
            scale[j] = d.sqrt();
        }
        for i in 0..q {
            for j in 0..q {
                self.psi[(i, j)] /= scale[i] * scale[j];
                self.c[(i, j)] /= scale[i] * scale[j];
            }
            self.psi[(i, i)] = 1.0;
        }
        for (mut row, &si) in self.u.axis_iter_mut(Axis(0)).zip(scale.iter()) {
            row /= si;
        }
        for (mut row, &si) in self.w.axis_iter_mut(Axis(0)).zip(scale.iter()) {
            row *= si;
        }
        Ok(())
    }

    /// Recompute `Ψ = U K Uᵀ` from scratch, canceling accumulated drift.
    pub fn refresh_psi(&mut self) {
        let mut psi = self.u.dot(&self.k).dot(&self.u.t());
        linalg::symmetrize(&mut psi);
        self.psi = psi;
    }

    /// Per-sample contribution scores: the row norms of `B = UᵀW`, whose
    /// column `j` expresses the reconstruction of sample `j` as a linear
    /// combination of the stored samples. Low scorers are pruning candidates.
    pub fn contribution_scores(&self) -> Array1<f64> {
        let b = self.u.t().dot(&self.w); // L×L
        let mut scores = Array1::<f64>::zeros(self.l());
        for (j, row) in b.axis_iter(Axis(0)).enumerate() {
            scores[j] = row.dot(&row).sqrt();
        }
        scores
    }

    /// Check the structural invariants: dimensions, weight ranges, symmetry
    /// of `C`/`Ψ`/`K`, `U = CWΛ`, and `Ψ = UKUᵀ`.
    pub fn validate(&self) -> Result<(), ProfileError> {
        let (q, l) = (self.q(), self.l());
        let fail = |msg: String| Err(ProfileError::InvariantViolation(msg));
        if self.x.ncols() != l
            || self.k.nrows() != l
            || self.k.ncols() != l
            || self.w.ncols() != l
            || self.u.nrows() != q
            || self.u.ncols() != l
            || self.c.nrows() != q
            || self.c.ncols() != q
            || self.psi.nrows() != q
            || self.psi.ncols() != q
            || self.lam.len() != l
        {
            return fail("inconsistent matrix dimensions".into());
        }
        if l < q {
            return fail(format!("profile holds {l} samples for {q} atoms"));
        }
        if !(self.xi > 0.0 && self.xi.is_finite()) {
            return fail(format!("xi must be finite and positive, got {}", self.xi));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return fail(format!("gamma must be positive, got {}", self.gamma));
        }
        if self.lam.iter().any(|&v| !(v > 0.0 && v <= 1.0)) {
            return fail("sample weight outside (0, 1]".into());
        }
        for (name, m) in [("C", &self.c), ("Psi", &self.psi), ("K", &self.k)] {
            if !m.iter().all(|v| v.is_finite()) {
                return fail(format!("{name} contains non-finite entries"));
            }
            let dev = sym_deviation(m);
            if dev > SYMMETRY_TOL {
                return fail(format!("{name} asymmetric by {dev:.3e}"));
            }
        }
        if !self.x.iter().all(|v| v.is_finite())
            || !self.w.iter().all(|v| v.is_finite())
            || !self.u.iter().all(|v| v.is_finite())
        {
            return fail("non-finite entries in stored matrices".into());
        }
        // U = C W Λ
        let mut cwl = self.c.dot(&self.w);
        for (mut col, &lam) in cwl.axis_iter_mut(Axis(1)).zip(self.lam.iter()) {
            col *= lam;
        }
        let dev_u = linalg::rel_frobenius(self.u.view(), cwl.view());
        if dev_u > U_TOL {
            return fail(format!("U deviates from CWΛ by {dev_u:.3e}"));
        }
        // Ψ = U K Uᵀ
        let ukut = self.u.dot(&self.k).dot(&self.u.t());
        let dev_psi = linalg::rel_frobenius(self.psi.view(), ukut.view());
        if dev_psi > PSI_TOL {
            return fail(format!("Psi deviates from UKUᵀ by {dev_psi:.3e}"));
        }
        Ok(())
    }

    /// [`Profile::validate`] plus the defining property of `C`:
    /// `C (W Λ Wᵀ + ξI) = I`.
    ///
    /// This stronger check holds after any sequence of grows and prunes but
    /// not after [`Profile::normalize`], which rescales the dictionary away
    /// from the exact least-squares solution.
    pub fn validate_wls(&self) -> Result<(), ProfileError> {
        self.validate()?;
        let q = self.q();
        let mut wl = self.w.to_owned();
        for (mut col, &lam) in wl.axis_iter_mut(Axis(1)).zip(self.lam.iter()) {
            col *= lam;
        }
        let mut a = wl.dot(&self.w.t());
        for j in 0..q {
            a[(j, j)] += self.xi;
        }
        let prod = self.c.dot(&a);
        let dev = linalg::rel_frobenius(prod.view(), Array2::eye(q).view());
        if dev > CONSISTENCY_TOL {
            return Err(ProfileError::InvariantViolation(format!(
                "C(WΛWᵀ + ξI) deviates from identity by {dev:.3e}"
            )));
        }
        Ok(())
    }

    /// Serializable snapshot of the full state.
    pub fn to_snapshot(&self) -> ProfileSnapshot {
        ProfileSnapshot {
            version: SNAPSHOT_VERSION,
            dims: SnapshotDims {
                n: self.n(),
                l: self.l(),
                q: self.q(),
            },
            kernel: self.kernel,
            gamma: self.gamma,
            xi: self.xi,
            lam: self.lam.to_vec(),
            x: to_rows(&self.x),
            k: to_rows(&self.k),
            w: to_rows(&self.w),
            c: to_rows(&self.c),
            u: to_rows(&self.u),
            psi: to_rows(&self.psi),
        }
    }

    /// Rebuild a profile from a snapshot, validating dimensions and the
    /// structural invariants before returning it.
    pub fn from_snapshot(snap: &ProfileSnapshot) -> Result<Self, ProfileError> {
        if snap.version != SNAPSHOT_VERSION {
            return Err(ProfileError::SnapshotVersion(snap.version));
        }
        let SnapshotDims { n, l, q } = snap.dims;
        if snap.lam.len() != l {
            return Err(ProfileError::SnapshotFormat(format!(
                "lam has {} entries, expected {l}",
                snap.lam.len()
            )));
        }
        let x = from_rows(&snap.x, n, l, "x")?;
        let k = from_rows(&snap.k, l, l, "k")?;
        let w = from_rows(&snap.w, q, l, "w")?;
        let c = from_rows(&snap.c, q, q, "c")?;
        let u = from_rows(&snap.u, q, l, "u")?;
        let psi = from_rows(&snap.psi, q, q, "psi")?;
        snap.kernel.validate()?;
        Profile::from_parts(
            snap.kernel,
            x,
            k,
            w,
            c,
            u,
            psi,
            Array1::from(snap.lam.clone()),
            snap.xi,
            snap.gamma,
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_snapshot()).expect("snapshot serialization")
    }

    pub fn from_json(text: &str) -> Result<Self, ProfileError> {
        let snap: ProfileSnapshot =
            serde_json::from_str(text).map_err(|e| ProfileError::SnapshotFormat(e.to_string()))?;
        Profile::from_snapshot(&snap)
    }
}

const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SnapshotDims {
    pub n: usize,
    pub l: usize,
    pub q: usize,
}

/// Versioned on-disk form of a [`Profile`]: all matrices as row-major nested
/// arrays plus the scalars needed to resume training or classify.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProfileSnapshot {
    pub version: u32,
    pub dims: SnapshotDims,
    pub kernel: Kernel,
    pub gamma: f64,
    pub xi: f64,
    pub lam: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    pub k: Vec<Vec<f64>>,
    pub w: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    pub psi: Vec<Vec<f64>>,
}

fn to_rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.axis_iter(Axis(0)).map(|r| r.to_vec()).collect()
}

fn from_rows(
    rows: &[Vec<f64>],
    nrows: usize,
    ncols: usize,
    name: &str,
) -> Result<Array2<f64>, ProfileError> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(ProfileError::SnapshotFormat(format!(
            "{name} is not a {nrows}x{ncols} matrix"
        )));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Array2::from_shape_vec((nrows, ncols), flat)
        .map_err(|e| ProfileError::SnapshotFormat(format!("{name}: {e}")))
}

fn sym_deviation(m: &Array2<f64>) -> f64 {
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            num += (m[(i, j)] - m[(j, i)]).powi(2);
            den += m[(i, j)].powi(2);
        }
    }
    num.sqrt() / den.sqrt().max(1e-300)
}

/// `α = (λI + wᵀu)⁻¹`, a scalar division for single-sample batches.
fn invert_grow_gain(
    w: &ArrayView2<f64>,
    u: &Array2<f64>,
    lambda: f64,
    m: usize,
) -> Result<Array2<f64>, ProfileError> {
    if m == 1 {
        let denom = lambda + w.column(0).dot(&u.column(0));
        let scale = lambda.max(denom.abs());
        if !denom.is_finite() || denom <= ALPHA_REL_TOL * scale {
            return Err(ProfileError::GrowRejected);
        }
        return Ok(Array2::from_elem((1, 1), 1.0 / denom));
    }
    let mut a = w.t().dot(u);
    linalg::symmetrize(&mut a);
    for j in 0..m {
        a[(j, j)] += lambda;
    }
    linalg::spd_inverse(a.view(), ALPHA_REL_TOL, MAX_ALPHA_COND).ok_or(ProfileError::GrowRejected)
}

/// `α_m = (Λ_m⁻¹ − w_mᵀu_m)⁻¹`; unlike the grow gain this can genuinely be
/// singular, which is exactly the situation the prune preconditions exclude.
fn invert_prune_gain(
    w_m: &Array2<f64>,
    u_m: &Array2<f64>,
    lam_m: &[f64],
    m: usize,
) -> Result<Array2<f64>, ProfileError> {
    if m == 1 {
        let denom = 1.0 / lam_m[0] - w_m.column(0).dot(&u_m.column(0));
        let scale = (1.0 / lam_m[0]).max(denom.abs());
        if !denom.is_finite() || denom <= ALPHA_REL_TOL * scale {
            return Err(ProfileError::PruneSingular);
        }
        return Ok(Array2::from_elem((1, 1), 1.0 / denom));
    }
    let mut a = -w_m.t().dot(u_m);
    linalg::symmetrize(&mut a);
    for j in 0..m {
        a[(j, j)] += 1.0 / lam_m[j];
    }
    linalg::spd_inverse(a.view(), ALPHA_REL_TOL, MAX_ALPHA_COND).ok_or(ProfileError::PruneSingular)
}
