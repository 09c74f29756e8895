//! Likelihood-ratio tests for random terms and the combined significance
//! table.

use serde::{Deserialize, Serialize};

use crate::data::TrialDataset;
use crate::numerics::Distribution;
use crate::text::aligned;

use super::anova::test_fixed_terms;
use super::design::{build_model, ModelSpec};
use super::reml::{fit_reml, FitMethod, FitOptions, MixedModelFit};
use super::{ModelCase, ModelError, Role, Term};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TermKind {
    Fixed,
    Random,
    Residual,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrtOptions {
    /// Likelihood used for the full/reduced comparison. REML by default;
    /// ML reproduces tools that refit by maximum likelihood before comparing.
    pub method: FitMethod,
    /// Halve the χ²₁ p-value (50:50 mixture with a point mass at zero).
    pub boundary_mixture: bool,
}

impl Default for LrtOptions {
    fn default() -> Self {
        Self {
            method: FitMethod::Reml,
            boundary_mixture: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct SignificanceOptions {
    pub fit: FitOptions,
    pub lrt: LrtOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceRow {
    pub term: String,
    pub kind: TermKind,
    /// χ² for random terms, F for fixed terms.
    pub statistic: Option<f64>,
    pub df1: Option<f64>,
    pub df2: Option<f64>,
    pub p_value: Option<f64>,
    pub variance: Option<f64>,
    pub std_dev: Option<f64>,
    pub mean_square: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceTable {
    pub case: ModelCase,
    pub lrt: LrtOptions,
    pub rows: Vec<SignificanceRow>,
    pub fit: MixedModelFit,
    pub warnings: Vec<String>,
}

fn chisq_p(stat: f64, mixture: bool) -> f64 {
    let sf = Distribution::chi_squared(1.0).map_or(f64::NAN, |d| d.sf(stat));
    if mixture {
        if stat > 0.0 {
            0.5 * sf
        } else {
            1.0
        }
    } else {
        sf
    }
}

fn embed(full: &ModelSpec, reduced: &ModelSpec, theta: &[f64], fill: f64) -> Vec<f64> {
    full.random
        .iter()
        .map(|b| {
            reduced
                .random
                .iter()
                .position(|r| r.term == b.term)
                .map_or(fill, |i| theta[i])
        })
        .collect()
}

fn single_start(fit: &FitOptions, method: FitMethod, theta: Vec<f64>) -> FitOptions {
    FitOptions {
        method,
        start_theta: Some(theta),
        ..fit.clone()
    }
}

/// One LRT per random term: the full model against the model without that
/// term. Returns the rows (report order) and the REML fit of the full model.
pub fn test_random_terms(
    ds: &TrialDataset,
    case: ModelCase,
    opts: &SignificanceOptions,
) -> Result<(Vec<SignificanceRow>, MixedModelFit), ModelError> {
    let spec = build_model(ds, case)?;
    if spec.random.is_empty() {
        return Err(ModelError::NothingToTest("random"));
    }
    let reml_fit = fit_reml(
        &spec,
        &FitOptions {
            method: FitMethod::Reml,
            ..opts.fit.clone()
        },
    )?;
    let method = opts.lrt.method;
    let mut full = if method == FitMethod::Reml {
        reml_fit.clone()
    } else {
        let ml = fit_reml(
            &spec,
            &single_start(&opts.fit, method, reml_fit.theta.clone()),
        )?;
        let multi = fit_reml(
            &spec,
            &FitOptions {
                method,
                ..opts.fit.clone()
            },
        )?;
        if multi.deviance < ml.deviance {
            multi
        } else {
            ml
        }
    };

    let terms = spec.random_terms();
    let mut reduced_dev = vec![0.0; terms.len()];
    // A reduced model beating the full one means the full optimum was local;
    // restart the full fit from the better point and redo the comparisons.
    for _pass in 0..3 {
        let mut improved = None;
        for (k, &t) in terms.iter().enumerate() {
            let red_spec = spec.without_random(t)?;
            let start: Vec<f64> = full
                .theta
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != k)
                .map(|(_, v)| if *v == 0.0 { 0.05 } else { *v })
                .collect();
            let red = fit_reml(&red_spec, &single_start(&opts.fit, method, start))?;
            reduced_dev[k] = red.deviance;
            if red.deviance < full.deviance - 1e-7
                && improved.as_ref().is_none_or(|(d, _)| red.deviance < *d)
            {
                improved = Some((red.deviance, embed(&spec, &red_spec, &red.theta, 0.05)));
            }
        }
        match improved {
            Some((_, theta)) => {
                let refit = fit_reml(&spec, &single_start(&opts.fit, method, theta))?;
                if refit.deviance < full.deviance {
                    full = refit;
                } else {
                    break;
                }
            }
            None => break,
        }
    }

    let mut rows = Vec::new();
    for t in Term::REPORT_ORDER {
        let Some(k) = terms.iter().position(|&x| x == t) else {
            continue;
        };
        let label = t.label(spec.with_year).to_string();
        let stat = (reduced_dev[k] - full.deviance).max(0.0);
        let vc = reml_fit.variance_components[&label];
        rows.push(SignificanceRow {
            term: label,
            kind: TermKind::Random,
            statistic: Some(stat),
            df1: Some(1.0),
            df2: None,
            p_value: Some(chisq_p(stat, opts.lrt.boundary_mixture)),
            variance: Some(vc.variance),
            std_dev: Some(vc.std_dev),
            mean_square: None,
        });
    }
    Ok((rows, reml_fit))
}

/// Random-term LRTs, fixed-term F tests (balanced data only) and a residual
/// line, in the usual report order.
pub fn significance_table(
    ds: &TrialDataset,
    case: ModelCase,
    opts: &SignificanceOptions,
) -> Result<SignificanceTable, ModelError> {
    let spec = build_model(ds, case)?;
    let has_fixed = !spec.fixed_terms.is_empty();
    let (random_rows, fit) = test_random_terms(ds, case, opts)?;
    let fixed = if has_fixed {
        Some(test_fixed_terms(ds, case)?)
    } else {
        None
    };

    let mut rows = Vec::new();
    for t in Term::REPORT_ORDER {
        let label = t.label(spec.with_year);
        if let Some(r) = random_rows.iter().find(|r| r.term == label) {
            rows.push(r.clone());
        } else if let Some(a) = fixed.as_ref().and_then(|f| {
            f.iter()
                .find(|r| r.term == Some(t) && r.role == Role::Fixed)
        }) {
            rows.push(SignificanceRow {
                term: label.to_string(),
                kind: TermKind::Fixed,
                statistic: a.f_value,
                df1: a.df_num,
                df2: a.df_den,
                p_value: a.p_value,
                variance: None,
                std_dev: None,
                mean_square: Some(a.mean_square),
            });
        }
    }
    let resid_ms = fixed
        .as_ref()
        .and_then(|f| f.iter().find(|r| r.term.is_none()))
        .map(|r| r.mean_square);
    rows.push(SignificanceRow {
        term: "residual".into(),
        kind: TermKind::Residual,
        statistic: None,
        df1: None,
        df2: None,
        p_value: None,
        variance: Some(fit.residual_variance),
        std_dev: Some(fit.residual_std_dev),
        mean_square: resid_ms,
    });
    let warnings = fit.warnings.clone();
    Ok(SignificanceTable {
        case,
        lrt: opts.lrt,
        rows,
        fit,
        warnings,
    })
}

fn opt(v: Option<f64>, prec: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.prec$}"))
}

impl SignificanceTable {
    /// Plain-text tables: random terms (variance, sd, χ² p) and fixed terms
    /// (mean square, F, p), each closed by the residual line.
    pub fn to_text(&self) -> String {
        let resid = self.rows.iter().find(|r| r.kind == TermKind::Residual);
        let mut out = String::new();
        let random: Vec<&SignificanceRow> = self
            .rows
            .iter()
            .filter(|r| r.kind == TermKind::Random)
            .collect();
        if !random.is_empty() {
            let mut body: Vec<Vec<String>> = random
                .iter()
                .map(|r| {
                    vec![
                        r.term.clone(),
                        opt(r.variance, 2),
                        opt(r.std_dev, 2),
                        opt(r.p_value, 3),
                    ]
                })
                .collect();
            if let Some(r) = resid {
                body.push(vec![
                    r.term.clone(),
                    opt(r.variance, 2),
                    opt(r.std_dev, 2),
                    "-".into(),
                ]);
            }
            out.push_str(&aligned(
                &[
                    "Source of variance",
                    "Variance",
                    "Standard deviation",
                    "p value of Chi-square test",
                ],
                &body,
            ));
        }
        let fixed: Vec<&SignificanceRow> = self
            .rows
            .iter()
            .filter(|r| r.kind == TermKind::Fixed)
            .collect();
        if !fixed.is_empty() {
            if !out.is_empty() {
                out.push('\n');
            }
            let mut body: Vec<Vec<String>> = fixed
                .iter()
                .map(|r| {
                    vec![
                        r.term.clone(),
                        opt(r.mean_square, 3),
                        opt(r.statistic, 3),
                        opt(r.p_value, 3),
                    ]
                })
                .collect();
            if let Some(r) = resid {
                body.push(vec![
                    r.term.clone(),
                    opt(r.mean_square, 3),
                    "-".into(),
                    "-".into(),
                ]);
            }
            out.push_str(&aligned(
                &[
                    "Source of variance",
                    "Mean of squared error",
                    "F value",
                    "p value of F test",
                ],
                &body,
            ));
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "term",
            "kind",
            "variance",
            "std_dev",
            "mean_square",
            "statistic",
            "df1",
            "df2",
            "p_value",
        ])
        .expect("write to Vec");
        let cell = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x}"));
        for r in &self.rows {
            let kind = match r.kind {
                TermKind::Fixed => "fixed",
                TermKind::Random => "random",
                TermKind::Residual => "residual",
            };
            w.write_record([
                r.term.clone(),
                kind.to_string(),
                cell(r.variance),
                cell(r.std_dev),
                cell(r.mean_square),
                cell(r.statistic),
                cell(r.df1),
                cell(r.df2),
                cell(r.p_value),
            ])
            .expect("write to Vec");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }
}
