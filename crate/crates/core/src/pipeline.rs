//! The whole analysis in one call, plus the files derived from it. Shared
//! by the command line and the HTTP service so both produce identical
//! output for identical input.

use serde::{Deserialize, Serialize};

use crate::ammi::{ammi_biplot_data, fit_ammi, ComponentChoice, PooledError};
use crate::biplot::BiplotMode;
use crate::data::{two_way_means, EnvironmentGrouping, TrialDataset};
use crate::export::{
    render_residual_scatter, render_svg, AmmiSection, AnalysisBundle, GgeSection, SvgStyle,
};
use crate::gge::{biplot_geometry, fit_gge, Centering};
use crate::mixed::{
    predict, significance_table, ModelCase, SignificanceOptions, SignificanceTable,
};
use crate::stability::{fit_stability_glm, stability_report, StabilityOptions, StabilityReport};
use crate::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineOptions {
    /// Fixed/random assignment for the significance tests, 1 to 5.
    pub case: u8,
    pub significance: SignificanceOptions,
    pub stability: StabilityOptions,
    /// Multiplicative AMMI terms; chosen by bootstrap when absent.
    pub components: Option<usize>,
    pub alpha: f64,
    pub n_boot: usize,
    pub seed: u64,
    /// Environments of the AMMI and GGE tables.
    pub grouping: EnvironmentGrouping,
    pub centering: Centering,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            case: 1,
            significance: SignificanceOptions::default(),
            stability: StabilityOptions::default(),
            components: None,
            alpha: 0.05,
            n_boot: 1000,
            seed: 0,
            grouping: EnvironmentGrouping::Location,
            centering: Centering::EnvironmentCentered,
        }
    }
}

impl PipelineOptions {
    pub fn model_case(&self) -> Result<ModelCase, Error> {
        Ok(ModelCase::new(self.case)?)
    }

    pub fn component_choice(&self) -> ComponentChoice {
        match self.components {
            Some(n) => ComponentChoice::Fixed { n },
            None => ComponentChoice::Bootstrap {
                alpha: self.alpha,
                n_boot: self.n_boot,
                seed: self.seed,
            },
        }
    }
}

pub fn run_significance(
    ds: &TrialDataset,
    opts: &PipelineOptions,
) -> Result<SignificanceTable, Error> {
    Ok(significance_table(
        ds,
        opts.model_case()?,
        &opts.significance,
    )?)
}

pub fn run_stability(ds: &TrialDataset, opts: &PipelineOptions) -> Result<StabilityReport, Error> {
    Ok(stability_report(ds, &opts.stability)?)
}

/// Pooled plot error from the trial model, when the layout has one and
/// every cell mean rests on the same number of plots.
fn pooled_error(ds: &TrialDataset, grouping: EnvironmentGrouping) -> Option<PooledError> {
    let glm = fit_stability_glm(ds).ok()?;
    let table = two_way_means(ds, grouping);
    let first = *table.cell_counts.first()?.first()?;
    if first == 0 || table.cell_counts.iter().flatten().any(|&c| c != first) {
        return None;
    }
    Some(PooledError {
        mean_square: glm.residual_ms,
        df: glm.residual_df,
        reps: first,
    })
}

/// AMMI fit with biplots on every pair of the first three components.
pub fn run_ammi(ds: &TrialDataset, opts: &PipelineOptions) -> Result<AmmiSection, Error> {
    let table = two_way_means(ds, opts.grouping);
    let error = pooled_error(ds, opts.grouping);
    let fit = fit_ammi(&table, &opts.component_choice(), error.as_ref())?;
    let k = fit.max_components().min(3);
    let mut biplots = Vec::new();
    for a in 0..k {
        for b in a + 1..k {
            biplots.push(ammi_biplot_data(&fit, &[a, b])?);
        }
    }
    Ok(AmmiSection { fit, biplots })
}

/// GGE fit at the symmetric partition and every biplot mode at its
/// default partition.
pub fn run_gge(ds: &TrialDataset, opts: &PipelineOptions) -> Result<GgeSection, Error> {
    let table = two_way_means(ds, opts.grouping);
    let fit = fit_gge(&table, opts.centering, 0.5)?;
    let mut biplots = Vec::with_capacity(BiplotMode::ALL.len());
    for mode in BiplotMode::ALL {
        let f = fit_gge(&table, opts.centering, mode.default_svp())?;
        biplots.push(biplot_geometry(&f, mode)?);
    }
    Ok(GgeSection { fit, biplots })
}

/// Significance, stability, AMMI and GGE in that order; the first error
/// stops the run.
pub fn run_all(ds: &TrialDataset, opts: &PipelineOptions) -> Result<AnalysisBundle, Error> {
    let mut bundle = AnalysisBundle::new(ds.summary());
    bundle.significance.push(run_significance(ds, opts)?);
    bundle.stability = Some(run_stability(ds, opts)?);
    bundle.ammi = Some(run_ammi(ds, opts)?);
    bundle.gge = Some(run_gge(ds, opts)?);
    Ok(bundle)
}

/// One output file, path relative to the output directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifact {
    pub name: String,
    pub contents: String,
}

fn artifact(name: impl Into<String>, contents: String) -> Artifact {
    Artifact {
        name: name.into(),
        contents,
    }
}

pub fn significance_artifacts(
    table: &SignificanceTable,
    ds: &TrialDataset,
) -> Result<Vec<Artifact>, Error> {
    let case = table.case.id();
    let pred = predict(&table.fit, ds)?;
    let style = SvgStyle {
        title: Some(format!("Case {case}: predictions vs. residuals")),
        ..SvgStyle::default()
    };
    Ok(vec![
        artifact(format!("significance_case{case}.txt"), table.to_text()),
        artifact(format!("significance_case{case}.csv"), table.to_csv()),
        artifact(
            format!("residuals_case{case}.svg"),
            render_residual_scatter(&pred.fitted, &pred.residuals, &style),
        ),
    ])
}

pub fn stability_artifacts(report: &StabilityReport) -> Vec<Artifact> {
    vec![
        artifact("stability.txt", report.to_text()),
        artifact("stability.csv", report.to_csv()),
    ]
}

pub fn ammi_artifacts(section: &AmmiSection) -> Vec<Artifact> {
    let mut out = vec![
        artifact("ammi_anova.txt", section.fit.anova_text()),
        artifact("ammi_anova.csv", section.fit.anova_csv()),
        artifact("ammi_scores.csv", section.fit.scores_csv()),
    ];
    for g in &section.biplots {
        let axes: Vec<String> = g
            .axes
            .iter()
            .map(|a| format!("ipc{}", a.component + 1))
            .collect();
        out.push(artifact(
            format!("ammi_biplot_{}.svg", axes.join("_")),
            render_svg(g, &SvgStyle::default()),
        ));
    }
    out
}

pub fn gge_artifacts(section: &GgeSection) -> Vec<Artifact> {
    section
        .biplots
        .iter()
        .map(|g| {
            artifact(
                format!("gge_{}.svg", g.mode.name()),
                render_svg(g, &SvgStyle::default()),
            )
        })
        .collect()
}

/// Every file of a full run, `bundle.json` last.
pub fn bundle_artifacts(
    bundle: &AnalysisBundle,
    ds: &TrialDataset,
) -> Result<Vec<Artifact>, Error> {
    let mut out = Vec::new();
    for t in &bundle.significance {
        out.extend(significance_artifacts(t, ds)?);
    }
    if let Some(s) = &bundle.stability {
        out.extend(stability_artifacts(s));
    }
    if let Some(a) = &bundle.ammi {
        out.extend(ammi_artifacts(a));
    }
    if let Some(g) = &bundle.gge {
        out.extend(gge_artifacts(g));
    }
    out.push(artifact("bundle.json", bundle.to_json()));
    Ok(out)
}
