//! Cholesky factorisation of symmetric positive definite matrices.

use super::matrix::dot;
use super::{Matrix, NumericsError};

/// Lower-triangular factor `L` with `A = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: Matrix,
}

impl Cholesky {
    /// Factors `a`; only the lower triangle is read.
    pub fn new(a: &Matrix) -> Result<Self, NumericsError> {
        let n = a.rows();
        if a.cols() != n {
            return Err(NumericsError::DimensionMismatch {
                expected: n,
                found: a.cols(),
            });
        }
        let mut l = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let s = dot(&l.row(i)[..j], &l.row(j)[..j]);
                let v = a[(i, j)] - s;
                if i == j {
                    if !(v > 0.0) || !v.is_finite() {
                        return Err(NumericsError::NotPositiveDefinite { pivot: i });
                    }
                    l[(i, i)] = v.sqrt();
                } else {
                    l[(i, j)] = v / l[(j, j)];
                }
            }
        }
        Ok(Self { l })
    }

    pub fn factor(&self) -> &Matrix {
        &self.l
    }

    pub fn dim(&self) -> usize {
        self.l.rows()
    }

    /// `log |A|`.
    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.dim()).map(|i| self.l[(i, i)].ln()).sum::<f64>()
    }

    /// Solves `L x = b` in place.
    pub fn forward_in_place(&self, b: &mut [f64]) {
        let n = self.dim();
        for i in 0..n {
            let row = self.l.row(i);
            let s: f64 = row[..i].iter().zip(&b[..i]).map(|(x, y)| x * y).sum();
            b[i] = (b[i] - s) / row[i];
        }
    }

    /// Solves `Lᵀ x = b` in place.
    pub fn backward_in_place(&self, b: &mut [f64]) {
        let n = self.dim();
        for i in (0..n).rev() {
            b[i] /= self.l[(i, i)];
            let bi = b[i];
            let row = self.l.row(i);
            for (bj, &lij) in b[..i].iter_mut().zip(&row[..i]) {
                *bj -= lij * bi;
            }
        }
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.forward_in_place(&mut x);
        self.backward_in_place(&mut x);
        x
    }

    /// `A⁻¹`, dense.
    pub fn inverse(&self) -> Matrix {
        let n = self.dim();
        let mut inv = Matrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            let x = self.solve(&e);
            for i in 0..n {
                inv[(i, j)] = x[i];
            }
        }
        inv
    }
}
