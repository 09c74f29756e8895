//! Joint regression of one genotype on the environment index.
//!
//! The index is the mean of all genotypes in each year × location × rep
//! group. The genotype's observations are regressed on it together with
//! environment and rep indicators (first levels as reference). When the
//! index is constant within environments the environment block would absorb
//! the slope, so it is left out.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::data::{Environment, EnvironmentGrouping, TrialDataset};
use crate::numerics::{ols, Distribution, Matrix};

use super::{fit_stability_glm, stars, StabilityError, StabilityOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionStability {
    pub genotype: String,
    pub slope: f64,
    pub slope_se: f64,
    /// Two-sided t test of slope = 1.
    pub slope_t_p: Option<f64>,
    /// Residual mean square of the regression (s_d²).
    pub deviation_ms: f64,
    pub deviation_df: usize,
    /// F test of the deviation mean square against the pooled error.
    pub deviation_f_p: Option<f64>,
    pub slope_stars: String,
    pub deviation_stars: String,
    /// Environment indicators were dropped as collinear with the index.
    pub environment_block_dropped: bool,
}

/// Mean over genotypes of each year × location × rep group, per record.
fn group_index(ds: &TrialDataset) -> Vec<f64> {
    let mut acc: HashMap<(usize, usize, usize), (f64, usize)> = HashMap::new();
    for (c, r) in ds.codes().iter().zip(ds.records()) {
        let e = acc.entry((c.year, c.location, c.rep)).or_default();
        e.0 += r.trait_value;
        e.1 += 1;
    }
    ds.codes()
        .iter()
        .map(|c| {
            let (s, n) = acc[&(c.year, c.location, c.rep)];
            s / n as f64
        })
        .collect()
}

fn indicators(codes: &[usize], n_levels: usize) -> Vec<Vec<f64>> {
    (1..n_levels)
        .map(|lev| {
            codes
                .iter()
                .map(|&c| f64::from(u8::from(c == lev)))
                .collect()
        })
        .filter(|c: &Vec<f64>| c.iter().any(|&v| v != 0.0))
        .collect()
}

/// Residual sum of squares of `y` regressed on `cols` (plus intercept).
fn residual_ss(y: &[f64], cols: &[Vec<f64>]) -> Result<f64, StabilityError> {
    let mut all = vec![vec![1.0; y.len()]];
    all.extend(cols.iter().cloned());
    let x = Matrix::from_fn(y.len(), all.len(), |i, j| all[j][i]);
    Ok(ols(y, &x)?.residual_ss)
}

/// Regression statistics for one genotype, computing the pooled error from
/// the full trial model.
pub fn regression_stability(
    ds: &TrialDataset,
    genotype: &str,
    options: &StabilityOptions,
) -> Result<RegressionStability, StabilityError> {
    let glm = fit_stability_glm(ds)?;
    regression_stability_with_error(
        ds,
        genotype,
        options.grouping,
        Some((glm.residual_ms, glm.residual_df)),
    )
}

/// As [`regression_stability`] with a caller-supplied pooled error
/// `(mean square, df)`; `None` skips the deviation F test.
pub fn regression_stability_with_error(
    ds: &TrialDataset,
    genotype: &str,
    grouping: EnvironmentGrouping,
    error: Option<(f64, usize)>,
) -> Result<RegressionStability, StabilityError> {
    let g = ds
        .levels()
        .genotypes
        .iter()
        .position(|n| n == genotype)
        .ok_or_else(|| StabilityError::UnknownGenotype(genotype.to_string()))?;
    let index = group_index(ds);
    let rows: Vec<usize> = (0..ds.len())
        .filter(|&i| ds.codes()[i].genotype == g)
        .collect();

    let mut env_ids: HashMap<Environment, usize> = HashMap::new();
    let env: Vec<usize> = rows
        .iter()
        .map(|&i| {
            let e = ds.environment_of(&ds.records()[i], grouping);
            let next = env_ids.len();
            *env_ids.entry(e).or_insert(next)
        })
        .collect();
    if env_ids.len() < 3 {
        return Err(StabilityError::TooFewEnvironments {
            genotype: genotype.to_string(),
            found: env_ids.len(),
        });
    }
    let y: Vec<f64> = rows.iter().map(|&i| ds.records()[i].trait_value).collect();
    let x_idx: Vec<f64> = rows.iter().map(|&i| index[i]).collect();
    let reps: Vec<usize> = rows.iter().map(|&i| ds.codes()[i].rep).collect();
    let env_block = indicators(&env, env_ids.len());
    let rep_block = indicators(&reps, ds.levels().r());

    let idx_mean = x_idx.iter().sum::<f64>() / x_idx.len() as f64;
    let idx_ss: f64 = x_idx.iter().map(|v| (v - idx_mean).powi(2)).sum();
    if idx_ss <= 1e-24 * (1.0 + idx_mean * idx_mean) * x_idx.len() as f64 {
        return Err(StabilityError::CollinearIndex);
    }
    let tol = 1e-10 * idx_ss;
    let mut nuisance: Vec<Vec<f64>> = env_block.iter().chain(&rep_block).cloned().collect();
    let mut dropped = false;
    if residual_ss(&x_idx, &nuisance)? <= tol {
        dropped = true;
        nuisance.clone_from(&rep_block);
        if residual_ss(&x_idx, &nuisance)? <= tol {
            return Err(StabilityError::CollinearIndex);
        }
    }

    let mut cols = vec![vec![1.0; y.len()], x_idx];
    cols.extend(nuisance);
    let x = Matrix::from_fn(y.len(), cols.len(), |i, j| cols[j][i]);
    let fit = ols(&y, &x)?;
    let slope = fit.coefficients[1].ok_or(StabilityError::CollinearIndex)?;
    let df = fit.df_residual;
    let deviation_ms = fit.residual_ms().unwrap_or(0.0);
    let slope_se = fit.coefficient_standard_errors[1].unwrap_or(f64::NAN);

    let slope_t_p = (df > 0).then(|| {
        if slope_se > 0.0 {
            let t = (slope - 1.0) / slope_se;
            Distribution::student_t(df as f64).map_or(f64::NAN, |d| 2.0 * d.sf(t.abs()))
        } else if slope == 1.0 {
            1.0
        } else {
            0.0
        }
    });
    let deviation_f_p = match error {
        Some((ms, edf)) if df > 0 && edf > 0 => Some(if ms > 0.0 {
            Distribution::f(df as f64, edf as f64).map_or(f64::NAN, |d| d.sf(deviation_ms / ms))
        } else if deviation_ms > 0.0 {
            0.0
        } else {
            1.0
        }),
        _ => None,
    };

    Ok(RegressionStability {
        genotype: genotype.to_string(),
        slope,
        slope_se,
        slope_t_p,
        deviation_ms,
        deviation_df: df,
        deviation_f_p,
        slope_stars: slope_t_p.map_or("", stars).to_string(),
        deviation_stars: deviation_f_p.map_or("", stars).to_string(),
        environment_block_dropped: dropped,
    })
}
