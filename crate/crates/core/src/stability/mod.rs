//! Single-genotype stability statistics: joint regression on the environment
//! index, the least-squares trial model behind the pooled error, and the
//! variance-based measures (Wricke, Shukla, Kang, CV, Lin–Binns).

mod glm;
mod regression;
mod report;
mod variance;

use serde::{Deserialize, Serialize};

use crate::data::{DataError, EnvironmentGrouping};
use crate::numerics::NumericsError;

pub use glm::{fit_stability_glm, GlmTerm, StabilityGlm};
pub use regression::{regression_stability, regression_stability_with_error, RegressionStability};
pub use report::{stability_report, StabilityReport, StabilityRow};
pub use variance::{
    coefficient_of_variation, interaction_effects, kang_ys, lin_binns, shukla, shukla_sigma2,
    wricke, KangResult, KangScore, ShuklaStats,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StabilityError {
    #[error("genotype {genotype:?} is observed in {found} environments; at least 3 are needed")]
    TooFewEnvironments { genotype: String, found: usize },
    #[error("environment index is constant; the regression slope is not identifiable")]
    CollinearIndex,
    #[error("at least 3 genotypes are needed, found {0}")]
    TooFewGenotypes(usize),
    #[error("genotype {0:?} has zero mean; coefficient of variation undefined")]
    ZeroMean(String),
    #[error("unknown genotype {0:?}")]
    UnknownGenotype(String),
    #[error("singular design: {0}")]
    SingularDesign(String),
    #[error("malformed stability CSV: {0}")]
    Parse(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StabilityOptions {
    /// Environments for the two-way table and the regression's ENV block.
    pub grouping: EnvironmentGrouping,
    /// Replicates behind each cell of the two-way table when scaling the
    /// pooled error for the Shukla tests and Kang's LSD.
    pub error_reps: usize,
    /// Level of the LSD used for Kang's rank adjustment.
    pub lsd_alpha: f64,
}

impl Default for StabilityOptions {
    fn default() -> Self {
        Self {
            grouping: EnvironmentGrouping::Location,
            error_reps: 1,
            lsd_alpha: 0.05,
        }
    }
}

/// `***`, `**`, `*` at 0.001, 0.01, 0.05; empty otherwise.
pub fn stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}

/// Like [`stars`] but "ns" when not significant.
pub fn stars_or_ns(p: f64) -> &'static str {
    match stars(p) {
        "" => "ns",
        s => s,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn star_thresholds() {
        assert_eq!(stars(0.0005), "***");
        assert_eq!(stars(0.001), "**");
        assert_eq!(stars(0.009), "**");
        assert_eq!(stars(0.02), "*");
        assert_eq!(stars(0.05), "");
        assert_eq!(stars_or_ns(0.3), "ns");
        assert_eq!(stars_or_ns(0.004), "**");
    }
}
