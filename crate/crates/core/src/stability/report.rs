//! Per-genotype stability table joining every statistic.

use serde::{Deserialize, Serialize};

use crate::data::{two_way_means, EnvironmentGrouping, TrialDataset};
use crate::text::aligned;

use super::{
    coefficient_of_variation, fit_stability_glm, kang_ys, lin_binns,
    regression_stability_with_error, shukla, stars_or_ns, wricke, StabilityError, StabilityGlm,
    StabilityOptions,
};

/// One genotype. The leading columns follow the usual published layout
/// (genotype, slope, deviation, σ², s², W², YS).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityRow {
    pub genotype: String,
    pub slope: f64,
    pub deviation_ms: f64,
    pub sigma2: f64,
    pub ssquares: f64,
    pub wricke_w2: f64,
    pub kang_ys: i64,
    pub kang_selected: bool,
    pub slope_marks: String,
    pub deviation_marks: String,
    pub sigma2_marks: String,
    pub ssquares_marks: String,
    pub slope_se: f64,
    pub slope_p: Option<f64>,
    pub deviation_df: usize,
    pub deviation_p: Option<f64>,
    pub sigma2_p: f64,
    pub ssquares_p: f64,
    pub mean_trait: f64,
    pub cv: f64,
    pub lin_binns_p: f64,
    pub kang_rank: i64,
    pub kang_adjustment: i64,
    pub kang_stability_rating: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub grouping: EnvironmentGrouping,
    pub environments: Vec<String>,
    pub error_ms: f64,
    pub error_df: usize,
    pub error_reps: usize,
    pub lsd: f64,
    pub mean_ys: f64,
    pub glm: StabilityGlm,
    pub rows: Vec<StabilityRow>,
}

/// All statistics for every genotype, in input level order.
pub fn stability_report(
    ds: &TrialDataset,
    options: &StabilityOptions,
) -> Result<StabilityReport, StabilityError> {
    let table = two_way_means(ds, options.grouping);
    table.complete_matrix()?;
    let glm = fit_stability_glm(ds)?;
    let (ms, df) = (glm.residual_ms, glm.residual_df);
    let w2 = wricke(&table)?;
    let sh = shukla(&table, ms, df, options.error_reps)?;
    let kang = kang_ys(&table, &sh, ms, df, options.error_reps, options.lsd_alpha)?;
    let cv = coefficient_of_variation(&table)?;
    let lb = lin_binns(&table)?;

    let mut rows = Vec::with_capacity(table.n_genotypes());
    for (i, name) in table.genotypes.iter().enumerate() {
        let reg = regression_stability_with_error(ds, name, options.grouping, Some((ms, df)))?;
        let k = kang.scores[i];
        rows.push(StabilityRow {
            genotype: name.clone(),
            slope: reg.slope,
            deviation_ms: reg.deviation_ms,
            sigma2: sh[i].sigma2,
            ssquares: sh[i].ssquares,
            wricke_w2: w2[i],
            kang_ys: k.ys,
            kang_selected: k.selected,
            slope_marks: reg.slope_stars,
            deviation_marks: reg.deviation_stars,
            sigma2_marks: stars_or_ns(sh[i].sigma2_p).to_string(),
            ssquares_marks: stars_or_ns(sh[i].ssquares_p).to_string(),
            slope_se: reg.slope_se,
            slope_p: reg.slope_t_p,
            deviation_df: reg.deviation_df,
            deviation_p: reg.deviation_f_p,
            sigma2_p: sh[i].sigma2_p,
            ssquares_p: sh[i].ssquares_p,
            mean_trait: table.genotype_means[i],
            cv: cv[i],
            lin_binns_p: lb[i],
            kang_rank: k.rank,
            kang_adjustment: k.adjustment,
            kang_stability_rating: k.stability_rating,
        });
    }
    Ok(StabilityReport {
        grouping: options.grouping,
        environments: table.environment_labels(),
        error_ms: ms,
        error_df: df,
        error_reps: options.error_reps,
        lsd: kang.lsd,
        mean_ys: kang.mean_ys,
        glm,
        rows,
    })
}

impl StabilityReport {
    pub fn row(&self, genotype: &str) -> Option<&StabilityRow> {
        self.rows.iter().find(|r| r.genotype == genotype)
    }

    /// Aligned text in the published layout: marks appended to the values,
    /// `+` after YS for selected genotypes.
    pub fn to_text(&self) -> String {
        let body: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                let with = |v: f64, m: &str| {
                    if m.is_empty() {
                        format!("{v:.3}")
                    } else if m == "ns" {
                        format!("{v:.3} ns")
                    } else {
                        format!("{v:.3}{m}")
                    }
                };
                vec![
                    r.genotype.clone(),
                    with(r.slope, &r.slope_marks),
                    with(r.deviation_ms, &r.deviation_marks),
                    with(r.sigma2, &r.sigma2_marks),
                    with(r.ssquares, &r.ssquares_marks),
                    format!("{:.3}", r.wricke_w2),
                    format!("{}{}", r.kang_ys, if r.kang_selected { "+" } else { "" }),
                ]
            })
            .collect();
        aligned(
            &["CLT", "β1j", "s_d²", "σi²", "ssquares", "Wi²", "YSi"],
            &body,
        )
    }

    /// Every row field, full precision.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r).expect("write to Vec");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }

    /// Rows back from [`StabilityReport::to_csv`].
    pub fn rows_from_csv(text: &str) -> Result<Vec<StabilityRow>, StabilityError> {
        csv::Reader::from_reader(text.as_bytes())
            .deserialize()
            .collect::<Result<Vec<StabilityRow>, _>>()
            .map_err(|e| StabilityError::Parse(e.to_string()))
    }
}
