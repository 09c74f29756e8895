//! Variance-based stability measures on the genotype × environment table.

use serde::{Deserialize, Serialize};

use crate::data::TwoWayTable;
use crate::numerics::{Distribution, Matrix};

use super::StabilityError;

/// Double-centred cell means `x̄ᵢₑ − x̄ᵢ· − x̄·ₑ + x̄··` of a complete table.
pub fn interaction_effects(table: &TwoWayTable) -> Result<Matrix, StabilityError> {
    let m = table.complete_matrix()?;
    let (g, e) = (m.rows(), m.cols());
    let rows: Vec<f64> = (0..g)
        .map(|i| m.row(i).iter().sum::<f64>() / e as f64)
        .collect();
    let cols: Vec<f64> = (0..e)
        .map(|j| (0..g).map(|i| m[(i, j)]).sum::<f64>() / g as f64)
        .collect();
    let grand = rows.iter().sum::<f64>() / g as f64;
    Ok(Matrix::from_fn(g, e, |i, j| {
        m[(i, j)] - rows[i] - cols[j] + grand
    }))
}

/// Wricke's ecovalence `Wᵢ² = Σₑ (x̄ᵢₑ − x̄ᵢ· − x̄·ₑ + x̄··)²`.
pub fn wricke(table: &TwoWayTable) -> Result<Vec<f64>, StabilityError> {
    let z = interaction_effects(table)?;
    Ok((0..z.rows())
        .map(|i| z.row(i).iter().map(|v| v * v).sum())
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShuklaStats {
    pub sigma2: f64,
    pub sigma2_p: f64,
    /// Heterogeneity-adjusted variance after removing the genotype's
    /// regression on the environment index.
    pub ssquares: f64,
    pub ssquares_p: f64,
}

fn f_sf(stat: f64, df1: f64, df2: f64, denom: f64) -> f64 {
    if stat <= 0.0 {
        return 1.0;
    }
    if denom <= 0.0 || df2 <= 0.0 {
        return 0.0;
    }
    Distribution::f(df1, df2).map_or(f64::NAN, |d| d.sf(stat / denom))
}

/// `σᵢ² = [G(G−1)Wᵢ² − ΣⱼWⱼ²] / [(E−1)(G−1)(G−2)]` from ecovalences.
pub fn shukla_sigma2(w2: &[f64], n_environments: usize) -> Vec<f64> {
    let g = w2.len() as f64;
    let e = n_environments as f64;
    let total: f64 = w2.iter().sum();
    w2.iter()
        .map(|w| (g * (g - 1.0) * w - total) / ((e - 1.0) * (g - 1.0) * (g - 2.0)))
        .collect()
}

/// Shukla's stability variance σᵢ² and s²ᵢ with F tests against
/// `error_ms / reps` on (E−1, error_df) and (E−2, error_df) df.
/// Negative estimates are reported as they are.
pub fn shukla(
    table: &TwoWayTable,
    error_ms: f64,
    error_df: usize,
    reps: usize,
) -> Result<Vec<ShuklaStats>, StabilityError> {
    let z = interaction_effects(table)?;
    let (g, e) = (z.rows(), z.cols());
    if g < 3 {
        return Err(StabilityError::TooFewGenotypes(g));
    }
    if e < 3 {
        return Err(StabilityError::TooFewEnvironments {
            genotype: "(all)".into(),
            found: e,
        });
    }
    let (gf, ef) = (g as f64, e as f64);
    let w: Vec<f64> = (0..g)
        .map(|i| z.row(i).iter().map(|v| v * v).sum())
        .collect();
    let sigma2 = shukla_sigma2(&w, e);

    let m = table.complete_matrix()?;
    let env_means: Vec<f64> = (0..e)
        .map(|j| (0..g).map(|i| m[(i, j)]).sum::<f64>() / gf)
        .collect();
    let idx_mean = env_means.iter().sum::<f64>() / ef;
    let idx: Vec<f64> = env_means.iter().map(|m| m - idx_mean).collect();
    let idx_ss: f64 = idx.iter().map(|v| v * v).sum();
    let s: Vec<f64> = (0..g)
        .map(|i| {
            let row = z.row(i);
            let b = if idx_ss > 0.0 {
                row.iter().zip(&idx).map(|(a, b)| a * b).sum::<f64>() / idx_ss
            } else {
                0.0
            };
            row.iter().zip(&idx).map(|(a, x)| (a - b * x).powi(2)).sum()
        })
        .collect();
    let s_total: f64 = s.iter().sum();

    let denom = error_ms / reps.max(1) as f64;
    let edf = error_df as f64;
    Ok((0..g)
        .map(|i| {
            let sigma2 = sigma2[i];
            let ssquares = (gf * s[i] - s_total / (gf - 1.0)) / ((gf - 2.0) * (ef - 2.0));
            ShuklaStats {
                sigma2,
                sigma2_p: f_sf(sigma2, ef - 1.0, edf, denom),
                ssquares,
                ssquares_p: f_sf(ssquares, ef - 2.0, edf, denom),
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KangScore {
    /// Rank of the mean, lowest mean = 1 (ties share the lowest rank).
    pub rank: i64,
    /// Whole LSDs between the genotype mean and the grand mean, ±3 at most.
    pub adjustment: i64,
    pub adjusted_rank: i64,
    /// 0, −2, −4 or −8 for σ² not significant or significant at 0.10,
    /// 0.05, 0.01.
    pub stability_rating: i64,
    pub ys: i64,
    pub selected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KangResult {
    pub lsd: f64,
    pub mean_ys: f64,
    pub scores: Vec<KangScore>,
}

/// Kang's yield-stability statistic; a genotype is selected when its YS
/// exceeds the mean YS.
pub fn kang_ys(
    table: &TwoWayTable,
    shukla_out: &[ShuklaStats],
    error_ms: f64,
    error_df: usize,
    reps: usize,
    lsd_alpha: f64,
) -> Result<KangResult, StabilityError> {
    let m = table.complete_matrix()?;
    let (g, e) = (m.rows(), m.cols());
    if shukla_out.len() != g {
        return Err(crate::numerics::NumericsError::DimensionMismatch {
            expected: g,
            found: shukla_out.len(),
        }
        .into());
    }
    let means: Vec<f64> = (0..g)
        .map(|i| m.row(i).iter().sum::<f64>() / e as f64)
        .collect();
    let grand = means.iter().sum::<f64>() / g as f64;
    let t = if error_df > 0 {
        Distribution::student_t(error_df as f64)?.quantile(1.0 - lsd_alpha / 2.0)?
    } else {
        f64::INFINITY
    };
    let lsd = t * (2.0 * error_ms / (reps.max(1) * e) as f64).sqrt();

    let mut scores: Vec<KangScore> = (0..g)
        .map(|i| {
            let rank = 1 + means.iter().filter(|&&v| v < means[i]).count() as i64;
            let d = means[i] - grand;
            let adjustment = if d == 0.0 || !lsd.is_finite() {
                0
            } else {
                let steps = if lsd > 0.0 {
                    (d.abs() / lsd).floor().min(3.0)
                } else {
                    3.0
                };
                d.signum() as i64 * steps as i64
            };
            let p = shukla_out[i].sigma2_p;
            let stability_rating = if p < 0.01 {
                -8
            } else if p < 0.05 {
                -4
            } else if p < 0.10 {
                -2
            } else {
                0
            };
            KangScore {
                rank,
                adjustment,
                adjusted_rank: rank + adjustment,
                stability_rating,
                ys: rank + adjustment + stability_rating,
                selected: false,
            }
        })
        .collect();
    let mean_ys = scores.iter().map(|s| s.ys as f64).sum::<f64>() / g as f64;
    for s in &mut scores {
        s.selected = s.ys as f64 > mean_ys;
    }
    Ok(KangResult {
        lsd,
        mean_ys,
        scores,
    })
}

/// `CVᵢ = 100 · sd(environment means of i) / x̄ᵢ·`, sample standard deviation.
pub fn coefficient_of_variation(table: &TwoWayTable) -> Result<Vec<f64>, StabilityError> {
    let m = table.complete_matrix()?;
    let e = m.cols();
    (0..m.rows())
        .map(|i| {
            let row = m.row(i);
            let mean = row.iter().sum::<f64>() / e as f64;
            if mean == 0.0 {
                return Err(StabilityError::ZeroMean(table.genotypes[i].clone()));
            }
            let var = if e > 1 {
                row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (e - 1) as f64
            } else {
                0.0
            };
            Ok(100.0 * var.sqrt() / mean)
        })
        .collect()
}

/// Lin–Binns superiority `Pᵢ = Σₑ (x̄ᵢₑ − Mₑ)² / (2E)`, `Mₑ` the best cell
/// mean in environment e.
pub fn lin_binns(table: &TwoWayTable) -> Result<Vec<f64>, StabilityError> {
    let m = table.complete_matrix()?;
    let (g, e) = (m.rows(), m.cols());
    let best: Vec<f64> = (0..e)
        .map(|j| (0..g).map(|i| m[(i, j)]).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    Ok((0..g)
        .map(|i| {
            m.row(i)
                .iter()
                .zip(&best)
                .map(|(v, b)| (v - b).powi(2))
                .sum::<f64>()
                / (2 * e) as f64
        })
        .collect())
}
