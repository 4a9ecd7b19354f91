//! Kernelized Order Recursive Matching Pursuit.
//!
//! Sparse-codes a signal against a dictionary that is never materialized:
//! the only inputs are the dictionary Gram matrix `Ψ`, the atom/signal inner
//! products `h`, and the signal energy `σ²`. Selection is greedy: at each
//! step the atom with the largest squared correlation against the current
//! residual, normalized by the atom's energy outside the span of the atoms
//! already chosen, wins. That orthogonalized energy is maintained through an
//! incremental Cholesky factorization of `Ψ` restricted to the support, so a
//! selection step costs `O(s·Q)`.
//!
//! The same selection rule run on explicit vectors lives in
//! [`crate::oracle::explicit_ormp`]; the two must agree atom for atom, which
//! the test suites check exhaustively.

use ndarray::{Array1, ArrayView1, ArrayView2};
use thiserror::Error;

/// Atoms whose (orthogonalized) energy falls below this fraction of the
/// largest diagonal entry are excluded from selection.
pub(crate) const DEGENERATE_REL: f64 = 1e-12;
/// Selection stops once the squared residual drops below this fraction of
/// the signal energy.
pub(crate) const EARLY_STOP_REL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum KormpError {
    #[error("gram matrix must be square, got {0}x{1}")]
    GramNotSquare(usize, usize),
    #[error("inner-product vector has length {got}, expected {expected}")]
    InnerProductLength { got: usize, expected: usize },
    #[error("sparsity {sparsity} out of range for {atoms} atoms")]
    SparsityOutOfRange { sparsity: usize, atoms: usize },
    #[error("signal energy must be non-negative, got {0}")]
    NegativeEnergy(f64),
    #[error("non-finite value in solver input")]
    NonFinite,
}

/// The result of a sparse-coding run: which atoms were selected, their
/// least-squares coefficients, and the squared residual in feature space.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCode {
    support: Vec<usize>,
    coeffs: Vec<f64>,
    sq_error: f64,
    dim: usize,
}

impl SparseCode {
    pub(crate) fn new(support: Vec<usize>, coeffs: Vec<f64>, sq_error: f64, dim: usize) -> Self {
        debug_assert_eq!(support.len(), coeffs.len());
        SparseCode {
            support,
            coeffs,
            sq_error,
            dim,
        }
    }

    /// Selected atom indices, in selection order.
    pub fn support(&self) -> &[usize] {
        &self.support
    }

    /// Coefficients aligned with [`Self::support`].
    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Squared representation error `‖φ(x) − D w‖²` in feature space.
    pub fn sq_error(&self) -> f64 {
        self.sq_error
    }

    /// Number of atoms in the dictionary this code refers to.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Expand to a dense coefficient vector with zeros off the support.
    pub fn dense(&self) -> Array1<f64> {
        let mut w = Array1::zeros(self.dim);
        for (&j, &c) in self.support.iter().zip(self.coeffs.iter()) {
            w[j] = c;
        }
        w
    }
}

/// Sparse-code a signal from Gram-domain quantities.
///
/// `psi` is the `Q×Q` dictionary Gram matrix, `h` the length-`Q` vector of
/// inner products between the atoms and the signal, `sigma2` the signal
/// energy, and `s` the maximum number of atoms to select. The coefficients
/// on the final support solve `Ψ_SS w_S = h_S`.
///
/// Atoms that would make the restricted Gram matrix singular are skipped;
/// if no selectable atom remains the best code found so far is returned,
/// which may have an empty support.
pub fn solve(
    psi: ArrayView2<f64>,
    h: ArrayView1<f64>,
    sigma2: f64,
    s: usize,
) -> Result<SparseCode, KormpError> {
    let q = psi.nrows();
    if psi.ncols() != q {
        return Err(KormpError::GramNotSquare(q, psi.ncols()));
    }
    if h.len() != q {
        return Err(KormpError::InnerProductLength {
            got: h.len(),
            expected: q,
        });
    }
    if s == 0 || s > q {
        return Err(KormpError::SparsityOutOfRange {
            sparsity: s,
            atoms: q,
        });
    }
    if !sigma2.is_finite() || !psi.iter().all(|v| v.is_finite()) || !h.iter().all(|v| v.is_finite())
    {
        return Err(KormpError::NonFinite);
    }
    if sigma2 < 0.0 {
        return Err(KormpError::NegativeEnergy(sigma2));
    }

    let max_diag = psi.diag().iter().fold(0.0f64, |m, &d| m.max(d));
    if max_diag <= 0.0 {
        return Ok(SparseCode::new(Vec::new(), Vec::new(), sigma2, q));
    }
    let skip_tol = DEGENERATE_REL * max_diag;

    // Per-candidate state, updated after every selection:
    //   z[j]   partial Cholesky column of Ψ over the current support
    //   e[j]   atom energy outside the span of the support
    //   c[j]   correlation of the atom with the current residual
    let mut z: Vec<Vec<f64>> = vec![Vec::with_capacity(s); q];
    let mut e: Vec<f64> = psi.diag().to_vec();
    let mut c: Vec<f64> = h.to_vec();
    let mut chosen = vec![false; q];

    let mut support: Vec<usize> = Vec::with_capacity(s);
    let mut lrows: Vec<Vec<f64>> = Vec::with_capacity(s);
    let mut wtilde: Vec<f64> = Vec::with_capacity(s);
    let mut res2 = sigma2;

    for _step in 0..s {
        if res2 <= EARLY_STOP_REL * sigma2 {
            break;
        }
        let mut best: Option<(usize, f64)> = None;
        for j in 0..q {
            if chosen[j] || e[j] <= skip_tol {
                continue;
            }
            let score = c[j] * c[j] / e[j];
            if best.is_none_or(|(_, b)| score > b) {
                best = Some((j, score));
            }
        }
        let Some((jstar, _)) = best else {
            break; // every remaining atom is degenerate or already in the span
        };
        let pivot = e[jstar].sqrt();
        let wnew = c[jstar] / pivot;
        let zstar = z[jstar].clone();
        let mut lrow = zstar.clone();
        lrow.push(pivot);
        lrows.push(lrow);
        wtilde.push(wnew);
        support.push(jstar);
        chosen[jstar] = true;
        res2 -= wnew * wnew;

        if support.len() < s && res2 > EARLY_STOP_REL * sigma2 {
            for j in 0..q {
                if chosen[j] {
                    continue;
                }
                let mut dot = 0.0;
                for (a, b) in zstar.iter().zip(z[j].iter()) {
                    dot += a * b;
                }
                let znew = (psi[(jstar, j)] - dot) / pivot;
                z[j].push(znew);
                e[j] -= znew * znew;
                c[j] -= znew * wnew;
            }
        }
    }

    // Back-substitute Lᵀ w_S = w̃ for the least-squares coefficients.
    let t = support.len();
    let mut coeffs = vec![0.0; t];
    for i in (0..t).rev() {
        let mut sum = wtilde[i];
        for j in (i + 1)..t {
            sum -= lrows[j][i] * coeffs[j];
        }
        coeffs[i] = sum / lrows[i][i];
    }

    Ok(SparseCode::new(support, coeffs, res2, q))
}
