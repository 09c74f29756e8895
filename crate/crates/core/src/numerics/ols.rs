//! Least squares by Householder QR with limited column pivoting.
//!
//! Columns are processed in their given order; a column whose remaining norm
//! falls below `ALIAS_TOL` times its original norm is declared aliased and
//! skipped, the same convention R's `lm` uses. Sequential (type I) sums of
//! squares fall out of `Qᵀy` for free.

use serde::{Deserialize, Serialize};

use super::{Matrix, NumericsError};

const ALIAS_TOL: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlsFit {
    /// One entry per design column; `None` for aliased columns.
    pub coefficients: Vec<Option<f64>>,
    pub coefficient_standard_errors: Vec<Option<f64>>,
    pub residuals: Vec<f64>,
    pub fitted: Vec<f64>,
    pub residual_ss: f64,
    pub df_residual: usize,
    pub design_rank: usize,
    /// Indices of aliased design columns.
    pub aliased: Vec<usize>,
    /// Type I sum of squares attributed to each design column (0 if aliased).
    pub sequential_ss: Vec<f64>,
}

impl OlsFit {
    /// Residual mean square, `None` without residual degrees of freedom.
    pub fn residual_ms(&self) -> Option<f64> {
        (self.df_residual > 0).then(|| self.residual_ss / self.df_residual as f64)
    }
}

pub fn ols(y: &[f64], x: &Matrix) -> Result<OlsFit, NumericsError> {
    let n = x.rows();
    let p = x.cols();
    if y.len() != n {
        return Err(NumericsError::DimensionMismatch {
            expected: n,
            found: y.len(),
        });
    }
    if !x.is_finite() || y.iter().any(|v| !v.is_finite()) {
        return Err(NumericsError::NonFinite);
    }

    let mut cols: Vec<Vec<f64>> = (0..p).map(|j| x.col(j)).collect();
    let original_norms: Vec<f64> = cols.iter().map(|c| norm(c)).collect();
    let mut qty = y.to_vec();
    let mut kept: Vec<usize> = Vec::with_capacity(p);
    let mut aliased = Vec::new();

    for j in 0..p {
        let r = kept.len();
        if r >= n {
            aliased.push(j);
            continue;
        }
        let tail_norm = norm(&cols[j][r..]);
        if original_norms[j] == 0.0 || tail_norm <= ALIAS_TOL * original_norms[j] {
            aliased.push(j);
            continue;
        }
        // Householder vector for rows r..n of column j.
        let alpha = if cols[j][r] > 0.0 {
            -tail_norm
        } else {
            tail_norm
        };
        let mut v: Vec<f64> = cols[j][r..].to_vec();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|t| t * t).sum();
        if vnorm2 > 0.0 {
            for col in cols.iter_mut().skip(j + 1) {
                reflect(&v, vnorm2, &mut col[r..]);
            }
            reflect(&v, vnorm2, &mut qty[r..]);
        }
        cols[j][r] = alpha;
        for t in cols[j][r + 1..].iter_mut() {
            *t = 0.0;
        }
        kept.push(j);
    }

    let rank = kept.len();
    // Back substitution on the kept columns.
    let mut beta_kept = vec![0.0; rank];
    for i in (0..rank).rev() {
        let mut s = qty[i];
        for k in (i + 1)..rank {
            s -= cols[kept[k]][i] * beta_kept[k];
        }
        beta_kept[i] = s / cols[kept[i]][i];
    }

    let mut coefficients = vec![None; p];
    for (k, &j) in kept.iter().enumerate() {
        coefficients[j] = Some(beta_kept[k]);
    }
    let dense_beta: Vec<f64> = coefficients.iter().map(|c| c.unwrap_or(0.0)).collect();
    let fitted = x.mul_vec(&dense_beta);
    let residuals: Vec<f64> = y.iter().zip(&fitted).map(|(a, b)| a - b).collect();
    let residual_ss: f64 = residuals.iter().map(|r| r * r).sum();
    let df_residual = n - rank;

    // R⁻¹ column by column for the standard errors.
    let mut coefficient_standard_errors = vec![None; p];
    if df_residual > 0 {
        let sigma2 = residual_ss / df_residual as f64;
        let mut rinv = vec![vec![0.0; rank]; rank];
        for c in 0..rank {
            for i in (0..=c).rev() {
                let mut s = if i == c { 1.0 } else { 0.0 };
                for k in (i + 1)..=c {
                    s -= cols[kept[k]][i] * rinv[k][c];
                }
                rinv[i][c] = s / cols[kept[i]][i];
            }
        }
        for (i, &j) in kept.iter().enumerate() {
            let row_ss: f64 = rinv[i][i..].iter().map(|v| v * v).sum();
            coefficient_standard_errors[j] = Some((sigma2 * row_ss).sqrt());
        }
    }

    let mut sequential_ss = vec![0.0; p];
    for (k, &j) in kept.iter().enumerate() {
        sequential_ss[j] = qty[k] * qty[k];
    }

    Ok(OlsFit {
        coefficients,
        coefficient_standard_errors,
        residuals,
        fitted,
        residual_ss,
        df_residual,
        design_rank: rank,
        aliased,
        sequential_ss,
    })
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|t| t * t).sum::<f64>().sqrt()
}

fn reflect(v: &[f64], vnorm2: f64, target: &mut [f64]) {
    let d: f64 = v.iter().zip(target.iter()).map(|(a, b)| a * b).sum();
    let f = 2.0 * d / vnorm2;
    for (t, a) in target.iter_mut().zip(v) {
        *t -= f * a;
    }
}
