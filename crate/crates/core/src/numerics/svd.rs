//! Thin singular value decomposition by one-sided (Hestenes) Jacobi rotations.
//!
//! The matrices in this crate are small (two-way tables of a few dozen rows and
//! columns), so the cubic-per-sweep cost is irrelevant next to the accuracy of
//! Jacobi: singular values come out with high relative precision and the
//! computed singular vectors are orthonormal to working precision.

use serde::{Deserialize, Serialize};

use super::matrix::dot;
use super::{Matrix, NumericsError};

const MAX_SWEEPS: usize = 80;

/// `a = u · diag(sigma) · vᵀ` with `k = min(m, n)` retained triplets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Svd {
    pub u: Matrix,
    pub sigma: Vec<f64>,
    pub v: Matrix,
}

impl Svd {
    pub fn rank_k(&self) -> usize {
        self.sigma.len()
    }

    /// Rebuilds `u_k · diag(sigma_k) · v_kᵀ` from the first `k` triplets.
    pub fn reconstruct(&self, k: usize) -> Matrix {
        let k = k.min(self.sigma.len());
        Matrix::from_fn(self.u.rows(), self.v.rows(), |i, j| {
            (0..k)
                .map(|t| self.u[(i, t)] * self.sigma[t] * self.v[(j, t)])
                .sum()
        })
    }
}

/// Thin SVD of an arbitrary finite matrix.
///
/// Singular values are sorted nonincreasing (ties keep their column order) and
/// each left singular vector is signed so that its first entry of magnitude
/// above `1e-12` is positive; the matching right vector is flipped with it.
pub fn svd(a: &Matrix) -> Result<Svd, NumericsError> {
    if !a.is_finite() {
        return Err(NumericsError::NonFinite);
    }
    if a.rows() == 0 || a.cols() == 0 {
        return Err(NumericsError::Empty);
    }
    let (u, sigma, v) = if a.rows() >= a.cols() {
        jacobi_tall(a)
    } else {
        let (u, sigma, v) = jacobi_tall(&a.transpose());
        (v, sigma, u)
    };
    Ok(normalize_signs(u, sigma, v))
}

/// One-sided Jacobi on a tall matrix (`m ≥ n`); returns column sets for `u`
/// (m×n), singular values and `v` (n×n), sorted but not sign-normalised.
fn jacobi_tall(a: &Matrix) -> (Vec<Vec<f64>>, Vec<f64>, Vec<Vec<f64>>) {
    let m = a.rows();
    let n = a.cols();
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| a.col(j)).collect();
    let mut vcols: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();

    let tol = f64::EPSILON * (m as f64);
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let alpha = dot(&cols[p], &cols[p]);
                let beta = dot(&cols[q], &cols[q]);
                let gamma = dot(&cols[p], &cols[q]);
                if alpha == 0.0 || beta == 0.0 || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut cols, p, q, c, s);
                rotate(&mut vcols, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let norms: Vec<f64> = cols.iter().map(|c| dot(c, c).sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));

    let sigma_max = norms.iter().cloned().fold(0.0, f64::max);
    let cutoff = sigma_max * f64::EPSILON * (m.max(n) as f64);

    let mut sigma = Vec::with_capacity(n);
    let mut ucols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut pending = Vec::new();
    let mut vsorted = Vec::with_capacity(n);
    for (slot, &j) in order.iter().enumerate() {
        let s = norms[j];
        vsorted.push(vcols[j].clone());
        if s > cutoff && s > 0.0 {
            sigma.push(s);
            ucols.push(cols[j].iter().map(|x| x / s).collect());
        } else {
            sigma.push(0.0);
            ucols.push(vec![0.0; m]);
            pending.push(slot);
        }
    }
    complete_basis(&mut ucols, &pending);
    (ucols, sigma, vsorted)
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (left, right) = cols.split_at_mut(q);
    let cp = &mut left[p];
    let cq = &mut right[0];
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let xp = *x;
        let xq = *y;
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

/// Fills the columns listed in `pending` with unit vectors orthogonal to every
/// other column, via Gram–Schmidt against the canonical basis.
fn complete_basis(cols: &mut [Vec<f64>], pending: &[usize]) {
    if pending.is_empty() {
        return;
    }
    let m = cols[0].len();
    for &slot in pending {
        let mut best: Option<Vec<f64>> = None;
        let mut best_norm = 0.0;
        for e in 0..m {
            let mut cand = vec![0.0; m];
            cand[e] = 1.0;
            // two passes of classical Gram-Schmidt
            for _ in 0..2 {
                for (j, other) in cols.iter().enumerate() {
                    if j == slot || (pending.contains(&j) && dot(other, other) == 0.0) {
                        continue;
                    }
                    let proj = dot(&cand, other);
                    for (c, o) in cand.iter_mut().zip(other) {
                        *c -= proj * o;
                    }
                }
            }
            let norm = dot(&cand, &cand).sqrt();
            if norm > best_norm + 1e-12 {
                best_norm = norm;
                best = Some(cand);
            }
        }
        let cand = best.expect("an m-dimensional space always has a free direction");
        cols[slot] = cand.into_iter().map(|x| x / best_norm).collect();
    }
}

fn normalize_signs(mut u: Vec<Vec<f64>>, sigma: Vec<f64>, mut v: Vec<Vec<f64>>) -> Svd {
    for (uc, vc) in u.iter_mut().zip(v.iter_mut()) {
        let flip = uc
            .iter()
            .find(|x| x.abs() > 1e-12)
            .is_some_and(|&x| x < 0.0);
        if flip {
            uc.iter_mut().for_each(|x| *x = -*x);
            vc.iter_mut().for_each(|x| *x = -*x);
        }
    }
    let k = sigma.len();
    let m = u.first().map_or(0, Vec::len);
    let n = v.first().map_or(0, Vec::len);
    Svd {
        u: Matrix::from_fn(m, k, |i, j| u[j][i]),
        sigma,
        v: Matrix::from_fn(n, k, |i, j| v[j][i]),
    }
}
