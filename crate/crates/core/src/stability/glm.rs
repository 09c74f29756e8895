//! Least-squares fit of the full trial model
//! `Trait ~ LC + YR + YR*LC + LC*YR*RP + CLT + CLT*LC + CLT*YR + CLT*LC*YR`,
//! whose residual is the pooled error for the stability tests.

use serde::{Deserialize, Serialize};

use crate::data::TrialDataset;
use crate::numerics::{ols, Matrix};

use super::StabilityError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmTerm {
    pub label: String,
    pub df: usize,
    /// Sequential (type I) sum of squares in model order.
    pub sum_sq: f64,
    pub mean_square: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityGlm {
    pub terms: Vec<GlmTerm>,
    pub residual_ss: f64,
    pub residual_df: usize,
    pub residual_ms: f64,
    pub n_obs: usize,
}

impl StabilityGlm {
    pub fn term(&self, label: &str) -> Option<&GlmTerm> {
        self.terms.iter().find(|t| t.label == label)
    }
}

#[derive(Clone, Copy)]
enum F {
    Yr,
    Lc,
    Clt,
}

/// Treatment-contrast product columns for the crossed factors `fs`.
fn crossed(ds: &TrialDataset, fs: &[F]) -> Vec<Vec<f64>> {
    let lv = ds.levels();
    let mut cols = vec![vec![1.0; ds.len()]];
    for f in fs {
        let (n, code): (usize, fn(&crate::data::RecordCodes) -> usize) = match f {
            F::Yr => (lv.y(), |c| c.year),
            F::Lc => (lv.l(), |c| c.location),
            F::Clt => (lv.g(), |c| c.genotype),
        };
        let mut next = Vec::new();
        for base in &cols {
            for lev in 1..n {
                next.push(
                    base.iter()
                        .zip(ds.codes())
                        .map(|(&b, c)| if code(c) == lev { b } else { 0.0 })
                        .collect(),
                );
            }
        }
        cols = next;
    }
    cols
}

/// Reps within each year × location cell, first rep as reference.
fn nested_reps(ds: &TrialDataset) -> Vec<Vec<f64>> {
    let lv = ds.levels();
    let mut cols = Vec::new();
    for y in 0..lv.y() {
        for l in 0..lv.l() {
            for r in 1..lv.r() {
                let col: Vec<f64> = ds
                    .codes()
                    .iter()
                    .map(|c| f64::from(u8::from(c.year == y && c.location == l && c.rep == r)))
                    .collect();
                if col.iter().any(|&v| v != 0.0) {
                    cols.push(col);
                }
            }
        }
    }
    cols
}

/// Fits the model; year terms are left out for single-year data.
pub fn fit_stability_glm(ds: &TrialDataset) -> Result<StabilityGlm, StabilityError> {
    let with_year = ds.levels().y() >= 2;
    let mut blocks: Vec<(&str, Vec<Vec<f64>>)> = vec![("LC", crossed(ds, &[F::Lc]))];
    if with_year {
        blocks.push(("YR", crossed(ds, &[F::Yr])));
        blocks.push(("YR * LC", crossed(ds, &[F::Yr, F::Lc])));
        blocks.push(("YR * LC * RP", nested_reps(ds)));
    } else {
        blocks.push(("LC * RP", nested_reps(ds)));
    }
    blocks.push(("CLT", crossed(ds, &[F::Clt])));
    blocks.push(("LC * CLT", crossed(ds, &[F::Lc, F::Clt])));
    if with_year {
        blocks.push(("YR * CLT", crossed(ds, &[F::Yr, F::Clt])));
        blocks.push(("YR * LC * CLT", crossed(ds, &[F::Yr, F::Lc, F::Clt])));
    }

    let mut columns = vec![vec![1.0; ds.len()]];
    let mut owner = vec![usize::MAX];
    for (b, (_, cols)) in blocks.iter().enumerate() {
        for c in cols {
            columns.push(c.clone());
            owner.push(b);
        }
    }
    let x = Matrix::from_fn(ds.len(), columns.len(), |i, j| columns[j][i]);
    let fit = ols(&ds.traits(), &x)?;
    if fit.df_residual == 0 {
        return Err(StabilityError::SingularDesign(
            "trial model leaves no residual degrees of freedom (one rep per cell?)".into(),
        ));
    }

    let terms = blocks
        .iter()
        .enumerate()
        .map(|(b, (label, _))| {
            let (mut df, mut ss) = (0usize, 0.0);
            for (j, &o) in owner.iter().enumerate() {
                if o == b && !fit.aliased.contains(&j) {
                    df += 1;
                    ss += fit.sequential_ss[j];
                }
            }
            GlmTerm {
                label: (*label).to_string(),
                df,
                sum_sq: ss,
                mean_square: if df > 0 { ss / df as f64 } else { 0.0 },
            }
        })
        .collect();
    let residual_ms = fit.residual_ss / fit.df_residual as f64;
    Ok(StabilityGlm {
        terms,
        residual_ss: fit.residual_ss,
        residual_df: fit.df_residual,
        residual_ms,
        n_obs: ds.len(),
    })
}
