//! Kernel functions, Gram matrices, and the explicit feature map for
//! polynomial kernels.
//!
//! A [`Kernel`] value is the only thing the online learner ever needs: every
//! other quantity is derived from pairwise evaluations `k(x, y)`. The
//! explicit map exists so the reference solvers can work with actual
//! feature-space vectors and cross-check the Gram-only paths against them.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("non-finite input value")]
    NonFinite,
    #[error("invalid kernel parameter: {0}")]
    InvalidParameter(String),
    #[error("explicit feature map requires a polynomial kernel")]
    UnsupportedKernel,
}

/// A positive (semi)definite kernel on `R^N`.
///
/// * `Linear`: `k(x, y) = xᵀy`
/// * `Polynomial`: `k(x, y) = (offset + xᵀy)^degree`
/// * `Rbf`: `k(x, y) = exp(-gamma · ‖x − y‖²)`
///
/// Polynomial kernels additionally expose a finite explicit feature map of
/// dimension `C(N + degree, degree)` whose inner products reproduce the
/// kernel exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Kernel {
    Linear,
    Polynomial { degree: u32, offset: f64 },
    Rbf { gamma: f64 },
}

impl Kernel {
    /// The inhomogeneous polynomial kernel `(offset + xᵀy)^degree`.
    pub fn polynomial(degree: u32, offset: f64) -> Result<Self, KernelError> {
        let k = Kernel::Polynomial { degree, offset };
        k.validate()?;
        Ok(k)
    }

    /// The Gaussian kernel `exp(-gamma · ‖x − y‖²)`.
    pub fn rbf(gamma: f64) -> Result<Self, KernelError> {
        let k = Kernel::Rbf { gamma };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), KernelError> {
        match *self {
            Kernel::Linear => Ok(()),
            Kernel::Polynomial { degree, offset } => {
                if degree == 0 {
                    Err(KernelError::InvalidParameter(
                        "polynomial degree must be positive".into(),
                    ))
                } else if !(offset >= 0.0 && offset.is_finite()) {
                    Err(KernelError::InvalidParameter(format!(
                        "polynomial offset must be finite and >= 0, got {offset}"
                    )))
                } else {
                    Ok(())
                }
            }
            Kernel::Rbf { gamma } => {
                if gamma > 0.0 && gamma.is_finite() {
                    Ok(())
                } else {
                    Err(KernelError::InvalidParameter(format!(
                        "rbf gamma must be finite and > 0, got {gamma}"
                    )))
                }
            }
        }
    }

    /// Evaluate `k(x, y)`.
    pub fn eval(&self, x: ArrayView1<f64>, y: ArrayView1<f64>) -> Result<f64, KernelError> {
        self.validate()?;
        if x.len() != y.len() {
            return Err(KernelError::DimensionMismatch(x.len(), y.len()));
        }
        if !x.iter().chain(y.iter()).all(|v| v.is_finite()) {
            return Err(KernelError::NonFinite);
        }
        Ok(self.eval_unchecked(x, y))
    }

    fn eval_unchecked(&self, x: ArrayView1<f64>, y: ArrayView1<f64>) -> f64 {
        match *self {
            Kernel::Linear => x.dot(&y),
            Kernel::Polynomial { degree, offset } => (offset + x.dot(&y)).powi(degree as i32),
            Kernel::Rbf { gamma } => {
                let mut d2 = 0.0;
                for (a, b) in x.iter().zip(y.iter()) {
                    let d = a - b;
                    d2 += d * d;
                }
                (-gamma * d2).exp()
            }
        }
    }

    /// Cross Gram matrix: entry `(i, j)` is `k(a_i, b_j)` for the columns of
    /// `a` and `b`.
    pub fn cross_gram(
        &self,
        a: ArrayView2<f64>,
        b: ArrayView2<f64>,
    ) -> Result<Array2<f64>, KernelError> {
        self.validate()?;
        if a.nrows() != b.nrows() {
            return Err(KernelError::DimensionMismatch(a.nrows(), b.nrows()));
        }
        if !a.iter().all(|v| v.is_finite()) || !b.iter().all(|v| v.is_finite()) {
            return Err(KernelError::NonFinite);
        }
        let (p, q) = (a.ncols(), b.ncols());
        let mut g = Array2::<f64>::zeros((p, q));
        for i in 0..p {
            let ai = a.column(i);
            for j in 0..q {
                g[(i, j)] = self.eval_unchecked(ai, b.column(j));
            }
        }
        Ok(g)
    }

    /// Dimension of the explicit polynomial feature space for `n`-dimensional
    /// inputs: `C(n + degree, degree)`.
    pub fn feature_dim(&self, n: usize) -> Result<usize, KernelError> {
        match *self {
            Kernel::Polynomial { degree, .. } => Ok(binomial(n + degree as usize, degree as usize)),
            _ => Err(KernelError::UnsupportedKernel),
        }
    }

    /// Explicit feature map of the polynomial kernel.
    ///
    /// The coordinates are the monomials of `x` of total degree at most
    /// `degree`, in graded lexicographic order, each weighted with the square
    /// root of its multinomial coefficient (times the matching power of the
    /// offset) so that `⟨φ(x), φ(y)⟩ = k(x, y)` holds exactly.
    pub fn explicit_map(&self, x: ArrayView1<f64>) -> Result<Array1<f64>, KernelError> {
        let Kernel::Polynomial { degree, offset } = *self else {
            return Err(KernelError::UnsupportedKernel);
        };
        self.validate()?;
        if !x.iter().all(|v| v.is_finite()) {
            return Err(KernelError::NonFinite);
        }
        let n = x.len();
        let d = degree as usize;
        let mut features = Vec::with_capacity(binomial(n + d, d));
        let mut exponents = vec![0usize; n];
        for total in 0..=d {
            let slack = d - total; // exponent assigned to the offset term
            let base = multinomial_prefix(d, slack) * offset.powi(slack as i32);
            emit_monomials(&x, &mut exponents, 0, total, base, &mut features);
        }
        Ok(Array1::from(features))
    }
}

/// Recursively enumerate all monomials with the given remaining total degree,
/// pushing `sqrt(coeff) · Π x_i^{e_i}` for each.
fn emit_monomials(
    x: &ArrayView1<f64>,
    exponents: &mut [usize],
    pos: usize,
    remaining: usize,
    coeff: f64,
    out: &mut Vec<f64>,
) {
    if pos == exponents.len() {
        if remaining == 0 {
            let mut v = coeff.sqrt();
            for (e, xi) in exponents.iter().zip(x.iter()) {
                v *= xi.powi(*e as i32);
            }
            out.push(v);
        }
        return;
    }
    if pos + 1 == exponents.len() {
        exponents[pos] = remaining;
        emit_monomials(x, exponents, pos + 1, 0, coeff / factorial(remaining), out);
        exponents[pos] = 0;
        return;
    }
    for e in (0..=remaining).rev() {
        exponents[pos] = e;
        emit_monomials(
            x,
            exponents,
            pos + 1,
            remaining - e,
            coeff / factorial(e),
            out,
        );
        exponents[pos] = 0;
    }
}

/// `degree! / slack!`: the start of the multinomial coefficient
/// `degree! / (slack! e_1! … e_n!)`; the remaining factorials are divided
/// out as the exponents are fixed.
fn multinomial_prefix(degree: usize, slack: usize) -> f64 {
    factorial_u128(degree) as f64 / factorial_u128(slack) as f64
}

fn factorial(k: usize) -> f64 {
    factorial_u128(k) as f64
}

fn factorial_u128(k: usize) -> u128 {
    (1..=k as u128).product()
}

fn binomial(n: usize, k: usize) -> usize {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Array1<f64> {
        Array1::from_iter((0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0))
    }

    #[test]
    fn linear_unit_vectors() {
        let k = Kernel::Linear;
        let x = array![1.0, 0.0];
        assert_eq!(k.eval(x.view(), x.view()).unwrap(), 1.0);
    }

    #[test]
    fn polynomial_squares_offset_plus_dot() {
        let k = Kernel::polynomial(2, 1.0).unwrap();
        let x = array![1.0, 0.0];
        assert_eq!(k.eval(x.view(), x.view()).unwrap(), 4.0);
    }

    #[test]
    fn rbf_is_one_on_diagonal() {
        let k = Kernel::rbf(0.7).unwrap();
        let x = array![3.0, -2.0, 0.25];
        assert_eq!(k.eval(x.view(), x.view()).unwrap(), 1.0);
    }

    #[test]
    fn eval_rejects_dimension_mismatch_and_nonfinite() {
        let k = Kernel::Linear;
        let x = array![1.0, 2.0];
        let y = array![1.0];
        assert!(matches!(
            k.eval(x.view(), y.view()),
            Err(KernelError::DimensionMismatch(2, 1))
        ));
        let bad = array![f64::NAN, 0.0];
        assert!(matches!(
            k.eval(x.view(), bad.view()),
            Err(KernelError::NonFinite)
        ));
    }

    #[test]
    fn cross_gram_identity_columns() {
        let k = Kernel::Linear;
        let eye = Array2::<f64>::eye(2);
        let g = k.cross_gram(eye.view(), eye.view()).unwrap();
        assert_eq!(g, Array2::<f64>::eye(2));
    }

    #[test]
    fn cross_gram_polynomial_basis_columns() {
        let k = Kernel::polynomial(2, 1.0).unwrap();
        let eye = Array2::<f64>::eye(2);
        let g = k.cross_gram(eye.view(), eye.view()).unwrap();
        assert_eq!(g, array![[4.0, 1.0], [1.0, 4.0]]);
    }

    #[test]
    fn cross_gram_matches_explicit_features() {
        let k = Kernel::polynomial(2, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = Array2::from_shape_fn((5, 4), |_| rng.random::<f64>() * 2.0 - 1.0);
        let g = k.cross_gram(a.view(), a.view()).unwrap();
        let f = k.feature_dim(5).unwrap();
        let mut mapped = Array2::<f64>::zeros((f, 4));
        for j in 0..4 {
            mapped
                .column_mut(j)
                .assign(&k.explicit_map(a.column(j)).unwrap());
        }
        let oracle = mapped.t().dot(&mapped);
        for (x, y) in g.iter().zip(oracle.iter()) {
            assert!((x - y).abs() <= 1e-10 * (1.0 + y.abs()));
        }
    }

    #[test]
    fn explicit_map_scalar_quadratic() {
        let k = Kernel::polynomial(2, 1.0).unwrap();
        let t = 1.7;
        let phi = k.explicit_map(array![t].view()).unwrap();
        let expect = array![1.0, std::f64::consts::SQRT_2 * t, t * t];
        for (a, b) in phi.iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        let self_ip = phi.dot(&phi);
        assert!((self_ip - (1.0 + t * t).powi(2)).abs() < 1e-12);
    }

    #[test]
    fn feature_dim_counts_monomials() {
        let k = Kernel::polynomial(2, 1.0).unwrap();
        assert_eq!(k.feature_dim(2).unwrap(), 6); // C(4, 2)
        assert_eq!(k.explicit_map(array![0.3, -0.4].view()).unwrap().len(), 6);
    }

    #[test]
    fn explicit_map_requires_polynomial() {
        let x = array![1.0];
        assert!(matches!(
            Kernel::Linear.explicit_map(x.view()),
            Err(KernelError::UnsupportedKernel)
        ));
    }

    #[test]
    fn symmetry_over_random_pairs() {
        let kernels = [
            Kernel::Linear,
            Kernel::polynomial(2, 1.0).unwrap(),
            Kernel::rbf(0.4).unwrap(),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for k in kernels {
            for _ in 0..200 {
                let x = random_vec(&mut rng, 6);
                let y = random_vec(&mut rng, 6);
                let xy = k.eval(x.view(), y.view()).unwrap();
                let yx = k.eval(y.view(), x.view()).unwrap();
                assert!((xy - yx).abs() <= 1e-12 * (1.0 + xy.abs()));
            }
        }
    }

    #[test]
    fn gram_matrices_are_psd() {
        let kernels = [
            Kernel::Linear,
            Kernel::polynomial(2, 1.0).unwrap(),
            Kernel::rbf(0.9).unwrap(),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for k in kernels {
            for _ in 0..20 {
                let a = Array2::from_shape_fn((5, 7), |_| rng.random::<f64>() * 2.0 - 1.0);
                let g = k.cross_gram(a.view(), a.view()).unwrap();
                let trace: f64 = g.diag().sum();
                assert!(crate::linalg::is_psd_within(g.view(), 1e-8 * trace));
            }
        }
    }

    #[test]
    fn inner_product_identity_across_dims_and_degrees() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for n in 1..=8usize {
            for degree in 1..=3u32 {
                let k = Kernel::polynomial(degree, 1.0).unwrap();
                for _ in 0..10 {
                    let x = random_vec(&mut rng, n);
                    let y = random_vec(&mut rng, n);
                    let px = k.explicit_map(x.view()).unwrap();
                    let py = k.explicit_map(y.view()).unwrap();
                    assert_eq!(px.len(), k.feature_dim(n).unwrap());
                    let direct = k.eval(x.view(), y.view()).unwrap();
                    let mapped = px.dot(&py);
                    assert!((direct - mapped).abs() <= 1e-10 * (1.0 + direct.abs()));
                }
            }
        }
    }
}
