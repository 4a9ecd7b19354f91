//! Small dense helpers for the symmetric systems that show up everywhere in
//! this crate: Cholesky factorization, solves and inverses for positive
//! definite matrices, and a pivoted Gaussian elimination used by the
//! reference solvers.
//!
//! Everything here works on plain `ndarray` types. The matrices involved are
//! at most a few hundred rows, so there is no point in pulling in a LAPACK
//! binding.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

/// Replace `a` with `(a + aᵀ)/2`.
pub fn symmetrize(a: &mut Array2<f64>) {
    let n = a.nrows();
    debug_assert_eq!(n, a.ncols());
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
///
/// Returns `None` when a pivot falls below `rel_tol` times the largest
/// diagonal entry, i.e. when the matrix is numerically singular or indefinite.
pub fn cholesky(a: ArrayView2<f64>, rel_tol: f64) -> Option<Array2<f64>> {
    let n = a.nrows();
    if n != a.ncols() {
        return None;
    }
    let scale = a.diag().iter().fold(0.0f64, |m, &d| m.max(d.abs()));
    let floor = rel_tol * scale.max(f64::MIN_POSITIVE);
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d.is_nan() || d <= floor {
            return None;
        }
        let pivot = d.sqrt();
        l[(j, j)] = pivot;
        for i in (j + 1)..n {
            let mut v = a[(i, j)];
            for k in 0..j {
                v -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = v / pivot;
        }
    }
    Some(l)
}

/// Squared ratio of the extreme Cholesky pivots, a cheap condition estimate
/// for the factored matrix.
pub fn cholesky_condition(l: &Array2<f64>) -> f64 {
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for i in 0..l.nrows() {
        let p = l[(i, i)];
        lo = lo.min(p);
        hi = hi.max(p);
    }
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        (hi / lo) * (hi / lo)
    }
}

/// Solve `L Lᵀ x = b` given the lower factor `L`.
pub fn cholesky_solve(l: &Array2<f64>, b: ArrayView1<f64>) -> Array1<f64> {
    let n = l.nrows();
    let mut x = b.to_owned();
    for i in 0..n {
        for k in 0..i {
            let t = l[(i, k)] * x[k];
            x[i] -= t;
        }
        x[i] /= l[(i, i)];
    }
    for i in (0..n).rev() {
        for k in (i + 1)..n {
            let t = l[(k, i)] * x[k];
            x[i] -= t;
        }
        x[i] /= l[(i, i)];
    }
    x
}

/// Inverse of a symmetric positive definite matrix via its Cholesky factor.
///
/// Rejects matrices whose pivot-based condition estimate exceeds `max_cond`.
pub fn spd_inverse(a: ArrayView2<f64>, rel_tol: f64, max_cond: f64) -> Option<Array2<f64>> {
    let n = a.nrows();
    let l = cholesky(a, rel_tol)?;
    if cholesky_condition(&l) > max_cond {
        return None;
    }
    let mut inv = Array2::<f64>::zeros((n, n));
    let mut e = Array1::<f64>::zeros(n);
    for j in 0..n {
        e.fill(0.0);
        e[j] = 1.0;
        let col = cholesky_solve(&l, e.view());
        inv.column_mut(j).assign(&col);
    }
    symmetrize(&mut inv);
    Some(inv)
}

/// Solve `a x = b` by Gaussian elimination with partial pivoting.
///
/// This is deliberately a different algorithm from the Cholesky path above so
/// the reference solvers stay independent of it.
pub fn solve_gauss(a: ArrayView2<f64>, b: ArrayView1<f64>) -> Option<Array1<f64>> {
    let n = a.nrows();
    if n != a.ncols() || n != b.len() {
        return None;
    }
    let mut aug = Array2::<f64>::zeros((n, n + 1));
    aug.slice_mut(ndarray::s![.., ..n]).assign(&a);
    aug.column_mut(n).assign(&b);
    for col in 0..n {
        let mut piv = col;
        let mut best = aug[(col, col)].abs();
        for row in (col + 1)..n {
            let v = aug[(row, col)].abs();
            if v > best {
                best = v;
                piv = row;
            }
        }
        if best < 1e-300 {
            return None;
        }
        if piv != col {
            for j in 0..=n {
                let t = aug[(col, j)];
                aug[(col, j)] = aug[(piv, j)];
                aug[(piv, j)] = t;
            }
        }
        for row in (col + 1)..n {
            let f = aug[(row, col)] / aug[(col, col)];
            for j in col..=n {
                let t = f * aug[(col, j)];
                aug[(row, j)] -= t;
            }
        }
    }
    let mut x = Array1::<f64>::zeros(n);
    for i in (0..n).rev() {
        let mut s = aug[(i, n)];
        for j in (i + 1)..n {
            s -= aug[(i, j)] * x[j];
        }
        x[i] = s / aug[(i, i)];
    }
    Some(x)
}

/// Check that `a + shift·I` admits a semidefinite factorization, i.e. that
/// the smallest eigenvalue of `a` is no smaller than `-shift`.
///
/// Uses a Cholesky variant that tolerates zero pivots, which is all the PSD
/// assertions in the test suites need.
pub fn is_psd_within(a: ArrayView2<f64>, shift: f64) -> bool {
    let n = a.nrows();
    if n != a.ncols() {
        return false;
    }
    let scale = a.diag().iter().fold(0.0f64, |m, &d| m.max(d.abs())) + shift.abs();
    let zero_tol = 1e-12 * scale.max(f64::MIN_POSITIVE);
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut d = a[(j, j)] + shift;
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d < -zero_tol {
            return false;
        }
        if d <= zero_tol {
            // semidefinite direction: zero the column and move on
            continue;
        }
        let pivot = d.sqrt();
        l[(j, j)] = pivot;
        for i in (j + 1)..n {
            let mut v = a[(i, j)];
            for k in 0..j {
                v -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = v / pivot;
        }
    }
    true
}

/// `‖a − b‖_F / max(‖b‖_F, 1e-300)`.
pub fn rel_frobenius(a: ArrayView2<f64>, b: ArrayView2<f64>) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        num += (x - y) * (x - y);
        den += y * y;
    }
    num.sqrt() / den.sqrt().max(1e-300)
}
