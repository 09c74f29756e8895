//! Linear mixed models for multi-environment trials: the five model cases,
//! REML/ML fitting, BLUPs and significance tests.

mod anova;
mod design;
mod optim;
mod reml;
mod significance;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::{DataError, Levels};
use crate::numerics::NumericsError;

pub use anova::{balanced_anova, test_fixed_terms, AnovaRow, BalancedAnova, ErrorStratum};
pub use design::{build_model, ModelSpec, RandomBlock};
pub use reml::{
    blup, deviance_at, fit_reml, predict, FitMethod, FitOptions, FixedEffect, MixedModelFit,
    Predictions, VarianceComponent,
};
pub use significance::{
    significance_table, test_random_terms, LrtOptions, SignificanceOptions, SignificanceRow,
    SignificanceTable, TermKind,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("model case must be 1..=5, got {0}")]
    InvalidCase(u8),
    #[error("term {term} needs at least 2 levels of {factor}")]
    InsufficientLevels { term: String, factor: String },
    #[error("singular design: {0}")]
    SingularDesign(String),
    #[error("unknown random term {0:?}")]
    UnknownTerm(String),
    #[error("balanced-ANOVA F tests need balanced data (every year, location, rep and genotype combination once)")]
    UnbalancedData,
    #[error("model has no {0} terms to test")]
    NothingToTest(&'static str),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Effect terms of the trial model. `Rep` is replication nested in
/// year × location.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Term {
    Clt,
    Lc,
    Yr,
    Rep,
    CltYr,
    CltLc,
    LcYr,
    CltYrLc,
}

/// Factors making up a term.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Factors {
    pub year: bool,
    pub location: bool,
    pub rep: bool,
    pub genotype: bool,
}

impl Term {
    pub const ALL: [Term; 8] = [
        Term::Clt,
        Term::Lc,
        Term::Yr,
        Term::Rep,
        Term::CltYr,
        Term::CltLc,
        Term::LcYr,
        Term::CltYrLc,
    ];

    /// Row order used in significance tables (highest order first).
    pub const REPORT_ORDER: [Term; 8] = [
        Term::CltYrLc,
        Term::Rep,
        Term::CltLc,
        Term::CltYr,
        Term::LcYr,
        Term::Clt,
        Term::Lc,
        Term::Yr,
    ];

    pub(crate) fn factors(self) -> Factors {
        let (year, location, rep, genotype) = match self {
            Term::Clt => (false, false, false, true),
            Term::Lc => (false, true, false, false),
            Term::Yr => (true, false, false, false),
            Term::Rep => (true, true, true, false),
            Term::CltYr => (true, false, false, true),
            Term::CltLc => (false, true, false, true),
            Term::LcYr => (true, true, false, false),
            Term::CltYrLc => (true, true, false, true),
        };
        Factors {
            year,
            location,
            rep,
            genotype,
        }
    }

    pub fn involves_year(self) -> bool {
        self.factors().year
    }

    /// Display name. Year is left out of the rep term for single-year data.
    pub fn label(self, with_year: bool) -> &'static str {
        match self {
            Term::Clt => "CLT",
            Term::Lc => "LC",
            Term::Yr => "YR",
            Term::Rep if with_year => "YR * LC * RP",
            Term::Rep => "LC * RP",
            Term::CltYr => "YR * CLT",
            Term::CltLc => "LC * CLT",
            Term::LcYr => "YR * LC",
            Term::CltYrLc => "YR * LC * CLT",
        }
    }

    /// Parses either display form ("YR * LC * CLT") or the snake_case name.
    pub fn parse(s: &str) -> Option<Term> {
        let norm: String = s
            .chars()
            .filter(|c| !c.is_whitespace())
            .collect::<String>()
            .to_ascii_uppercase();
        let mut parts: Vec<&str> = norm.split(['*', ':', '_']).collect();
        parts.sort_unstable();
        parts.dedup();
        let has = |p: &str| parts.contains(&p);
        let n = parts.len();
        Some(match () {
            _ if n == 1 && has("CLT") => Term::Clt,
            _ if n == 1 && has("LC") => Term::Lc,
            _ if n == 1 && has("YR") => Term::Yr,
            _ if has("RP") || has("REP") => Term::Rep,
            _ if n == 2 && has("CLT") && has("YR") => Term::CltYr,
            _ if n == 2 && has("CLT") && has("LC") => Term::CltLc,
            _ if n == 2 && has("LC") && has("YR") => Term::LcYr,
            _ if n == 3 && has("CLT") && has("LC") && has("YR") => Term::CltYrLc,
            _ => return None,
        })
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label(true))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Fixed,
    Random,
}

/// One of the five fixed/random assignments of the trial model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct ModelCase(u8);

impl TryFrom<u8> for ModelCase {
    type Error = ModelError;
    fn try_from(v: u8) -> Result<Self, ModelError> {
        ModelCase::new(v)
    }
}

impl From<ModelCase> for u8 {
    fn from(c: ModelCase) -> u8 {
        c.0
    }
}

impl ModelCase {
    pub fn new(id: u8) -> Result<Self, ModelError> {
        if (1..=5).contains(&id) {
            Ok(Self(id))
        } else {
            Err(ModelError::InvalidCase(id))
        }
    }

    pub fn id(self) -> u8 {
        self.0
    }

    pub fn role(self, term: Term) -> Role {
        use Role::*;
        if term == Term::Rep {
            return Random;
        }
        match (self.0, term) {
            (1, _) => Random,
            (2, _) => Fixed,
            (3, Term::Clt) => Fixed,
            (3, _) => Random,
            (4, Term::Lc) => Fixed,
            (4, _) => Random,
            (5, Term::Clt | Term::Lc | Term::CltLc) => Fixed,
            (5, _) => Random,
            _ => unreachable!("case validated on construction"),
        }
    }

    pub fn term_roles(self) -> Vec<(Term, Role)> {
        Term::ALL.iter().map(|&t| (t, self.role(t))).collect()
    }
}

/// Degrees of freedom of every source for given level counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DegreesOfFreedom {
    pub clt: usize,
    pub lc: usize,
    pub yr: usize,
    /// Reps nested in location × year: (R−1)·L·Y.
    pub rep: usize,
    /// The shorter (R−1)·L form that omits years; kept for comparison.
    pub rep_without_years: usize,
    /// True when the two rep forms disagree (more than one year).
    pub rep_forms_differ: bool,
    pub clt_yr: usize,
    pub clt_lc: usize,
    pub lc_yr: usize,
    pub clt_yr_lc: usize,
    /// Residual of the full balanced layout.
    pub residual: usize,
}

impl DegreesOfFreedom {
    pub fn new(g: usize, l: usize, y: usize, r: usize) -> Self {
        let s = |v: usize| v.saturating_sub(1);
        let rep = s(r) * l * y;
        let rep_without_years = s(r) * l;
        Self {
            clt: s(g),
            lc: s(l),
            yr: s(y),
            rep,
            rep_without_years,
            rep_forms_differ: rep != rep_without_years,
            clt_yr: s(g) * s(y),
            clt_lc: s(g) * s(l),
            lc_yr: s(l) * s(y),
            clt_yr_lc: s(g) * s(l) * s(y),
            residual: s(g) * s(r) * l * y,
        }
    }

    pub fn from_levels(levels: &Levels) -> Self {
        Self::new(levels.g(), levels.l(), levels.y(), levels.r())
    }

    pub fn of(&self, term: Term) -> usize {
        match term {
            Term::Clt => self.clt,
            Term::Lc => self.lc,
            Term::Yr => self.yr,
            Term::Rep => self.rep,
            Term::CltYr => self.clt_yr,
            Term::CltLc => self.clt_lc,
            Term::LcYr => self.lc_yr,
            Term::CltYrLc => self.clt_yr_lc,
        }
    }
}
