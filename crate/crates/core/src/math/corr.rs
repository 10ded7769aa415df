//! Correlation matrices, Cholesky factors and the pooling of a global and
//! a study-level correlation matrix.

use serde::{Deserialize, Serialize};

use crate::ad::Scalar;
use crate::error::{Error, Result};

/// Dense row-major square matrix over a [`Scalar`].
#[derive(Debug, Clone, PartialEq)]
pub struct Mat<S> {
    dim: usize,
    data: Vec<S>,
}

impl<S: Scalar> Mat<S> {
    pub fn identity(dim: usize) -> Self {
        let mut data = vec![S::zero(); dim * dim];
        for i in 0..dim {
            data[i * dim + i] = S::cst(1.0);
        }
        Mat { dim, data }
    }

    pub fn zeros(dim: usize) -> Self {
        Mat { dim, data: vec![S::zero(); dim * dim] }
    }

    pub fn from_rows(dim: usize, data: Vec<S>) -> Self {
        assert_eq!(data.len(), dim * dim);
        Mat { dim, data }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> S {
        self.data[i * self.dim + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: S) {
        self.data[i * self.dim + j] = v;
    }

    pub fn values(&self) -> Mat<f64> {
        Mat { dim: self.dim, data: self.data.iter().map(|v| v.val()).collect() }
    }

    pub fn as_slice(&self) -> &[S] {
        &self.data
    }
}

/// Cholesky factor `L` (lower triangular, positive diagonal) with `L Lᵀ = m`.
pub fn cholesky<S: Scalar>(m: &Mat<S>) -> Result<Mat<S>> {
    let n = m.dim();
    let mut l = Mat::zeros(n);
    for i in 0..n {
        for j in 0..=i {
            let mut s = m.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            if i == j {
                if !(s.val() > 0.0) {
                    return Err(Error::NotPositiveDefinite { pivot: i, value: s.val() });
                }
                l.set(i, i, s.sqrt());
            } else {
                l.set(i, j, s / l.get(j, j));
            }
        }
    }
    Ok(l)
}

/// `(1 - β) g + β d`, elementwise.
pub fn pool<S: Scalar>(g: &Mat<S>, d: &Mat<S>, beta: S) -> Mat<S> {
    let one_minus = S::cst(1.0) - beta;
    let data = g
        .data
        .iter()
        .zip(&d.data)
        .map(|(&a, &b)| one_minus * a + beta * b)
        .collect();
    Mat { dim: g.dim, data }
}

/// A validated correlation matrix: symmetric, unit diagonal, positive definite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct CorrelationMatrix(Mat<f64>);

impl CorrelationMatrix {
    pub fn identity(dim: usize) -> Self {
        CorrelationMatrix(Mat::identity(dim))
    }

    pub fn new(m: Mat<f64>) -> Result<Self> {
        let n = m.dim();
        for i in 0..n {
            if (m.get(i, i) - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidArgument(format!("diagonal entry {i} is {}", m.get(i, i))));
            }
            for j in 0..i {
                if (m.get(i, j) - m.get(j, i)).abs() > 1e-12 {
                    return Err(Error::InvalidArgument(format!("not symmetric at ({i},{j})")));
                }
            }
        }
        cholesky(&m)?;
        Ok(CorrelationMatrix(m))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidArgument("correlation matrix must be square".into()));
        }
        Self::new(Mat::from_rows(n, rows.concat()))
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0.get(i, j)
    }

    pub fn matrix(&self) -> &Mat<f64> {
        &self.0
    }

    pub fn cholesky(&self) -> Mat<f64> {
        cholesky(&self.0).expect("validated at construction")
    }
}

impl TryFrom<Vec<Vec<f64>>> for CorrelationMatrix {
    type Error = Error;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::from_rows(&rows)
    }
}

impl From<CorrelationMatrix> for Vec<Vec<f64>> {
    fn from(c: CorrelationMatrix) -> Self {
        let n = c.dim();
        (0..n).map(|i| (0..n).map(|j| c.get(i, j)).collect()).collect()
    }
}

/// Weighted pooling of a global and a deviation correlation matrix.
pub fn pool_correlation(
    global: &CorrelationMatrix,
    deviation: &CorrelationMatrix,
    beta: f64,
) -> Result<CorrelationMatrix> {
    if global.dim() != deviation.dim() {
        return Err(Error::InvalidArgument(format!(
            "dimension mismatch: {} vs {}",
            global.dim(),
            deviation.dim()
        )));
    }
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::InvalidArgument(format!("beta must lie in [0, 1], got {beta}")));
    }
    if beta == 0.0 {
        return Ok(global.clone());
    }
    if beta == 1.0 {
        return Ok(deviation.clone());
    }
    let mut m = pool(global.matrix(), deviation.matrix(), beta);
    for i in 0..m.dim() {
        m.set(i, i, 1.0);
    }
    CorrelationMatrix::new(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_corr(rng: &mut impl Rng, n: usize) -> CorrelationMatrix {
        // normalized Gram matrix of random vectors
        let a = DMatrix::<f64>::from_fn(n, n + 2, |_, _| rng.random_range(-1.0..1.0));
        let g = &a * a.transpose();
        let d: Vec<f64> = (0..n).map(|i| g[(i, i)].sqrt()).collect();
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 1.0 } else { g[(i, j)] / (d[i] * d[j]) }).collect())
            .collect();
        CorrelationMatrix::from_rows(&rows).unwrap()
    }

    #[test]
    fn cholesky_closed_forms() {
        let l = cholesky(&Mat::<f64>::identity(3)).unwrap();
        assert_eq!(l, Mat::identity(3));
        let m = Mat::from_rows(2, vec![1.0, 0.5, 0.5, 1.0]);
        let l = cholesky(&m).unwrap();
        assert_eq!(l.get(0, 0), 1.0);
        assert_eq!(l.get(0, 1), 0.0);
        assert_eq!(l.get(1, 0), 0.5);
        assert!((l.get(1, 1) - 0.75f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let m = Mat::from_rows(2, vec![1.0, 1.2, 1.2, 1.0]);
        assert!(matches!(cholesky(&m), Err(Error::NotPositiveDefinite { pivot: 1, .. })));
    }

    #[test]
    fn pooling_endpoints() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = random_corr(&mut rng, 3);
        let d = random_corr(&mut rng, 3);
        assert_eq!(pool_correlation(&g, &d, 0.0).unwrap(), g);
        assert_eq!(pool_correlation(&g, &d, 1.0).unwrap(), d);
        assert!(pool_correlation(&g, &d, 1.5).is_err());
        assert!(pool_correlation(&g, &CorrelationMatrix::identity(2), 0.5).is_err());
    }

    #[test]
    fn pooled_matrices_are_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let g = random_corr(&mut rng, 3);
            let d = random_corr(&mut rng, 3);
            let p = pool_correlation(&g, &d, 0.5).unwrap();
            let m = DMatrix::from_fn(3, 3, |i, j| p.get(i, j));
            let eig = m.symmetric_eigen().eigenvalues;
            assert!(eig.iter().all(|&e| e >= 0.0), "{eig}");
        }
    }

    proptest! {
        #[test]
        fn cholesky_reconstructs(seed in 0u64..10_000, n in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = random_corr(&mut rng, n);
            let l = c.cholesky();
            for i in 0..n {
                prop_assert!(l.get(i, i) > 0.0);
                for j in 0..n {
                    let s: f64 = (0..n).map(|k| l.get(i, k) * l.get(j, k)).sum();
                    prop_assert!((s - c.get(i, j)).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn pooling_stays_valid(seed in 0u64..10_000, beta in 0.0f64..=1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = random_corr(&mut rng, 4);
            let d = random_corr(&mut rng, 4);
            prop_assert!(pool_correlation(&g, &d, beta).is_ok());
        }
    }
}
