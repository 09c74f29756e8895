//! Design matrices for the five model cases.

use std::collections::HashMap;

use crate::data::{RecordCodes, TrialDataset};
use crate::numerics::{ols, Matrix};

use super::{ModelCase, ModelError, Role, Term};

/// Indicator block of one random term, stored as a level index per record.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomBlock {
    pub term: Term,
    pub label: String,
    pub levels: Vec<String>,
    pub index: Vec<usize>,
}

/// Fixed design `X`, random indicator blocks and response of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub case: ModelCase,
    pub with_year: bool,
    pub fixed_terms: Vec<Term>,
    pub x: Matrix,
    pub x_names: Vec<String>,
    pub random: Vec<RandomBlock>,
    pub y: Vec<f64>,
    pub warnings: Vec<String>,
}

impl ModelSpec {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn random_terms(&self) -> Vec<Term> {
        self.random.iter().map(|b| b.term).collect()
    }

    /// Same model with one random term removed.
    pub fn without_random(&self, term: Term) -> Result<ModelSpec, ModelError> {
        let label = term.label(self.with_year);
        if !self.random.iter().any(|b| b.term == term) {
            return Err(ModelError::UnknownTerm(label.to_string()));
        }
        let mut out = self.clone();
        out.random.retain(|b| b.term != term);
        Ok(out)
    }
}

// Order used for the random blocks and for fixed columns (R's term order for
// YR * LC * CLT).
const RANDOM_ORDER: [Term; 8] = [
    Term::Yr,
    Term::Lc,
    Term::Clt,
    Term::LcYr,
    Term::CltYr,
    Term::CltLc,
    Term::CltYrLc,
    Term::Rep,
];
const FIXED_ORDER: [Term; 7] = [
    Term::Yr,
    Term::Lc,
    Term::Clt,
    Term::LcYr,
    Term::CltYr,
    Term::CltLc,
    Term::CltYrLc,
];

/// Level codes of a record on the factors of `term`, in year, location, rep,
/// genotype order.
fn key(term: Term, c: &RecordCodes) -> [usize; 4] {
    let f = term.factors();
    let pick = |on: bool, v: usize| if on { v } else { usize::MAX };
    [
        pick(f.year, c.year),
        pick(f.location, c.location),
        pick(f.rep, c.rep),
        pick(f.genotype, c.genotype),
    ]
}

fn level_label(ds: &TrialDataset, k: &[usize; 4]) -> String {
    let l = ds.levels();
    let names = [&l.years, &l.locations, &l.reps, &l.genotypes];
    k.iter()
        .zip(names)
        .filter(|(v, _)| **v != usize::MAX)
        .map(|(&v, n)| n[v].as_str())
        .collect::<Vec<_>>()
        .join(":")
}

fn random_block(ds: &TrialDataset, term: Term, with_year: bool) -> RandomBlock {
    let mut ids: HashMap<[usize; 4], usize> = HashMap::new();
    let mut levels = Vec::new();
    let index = ds
        .codes()
        .iter()
        .map(|c| {
            let k = key(term, c);
            *ids.entry(k).or_insert_with(|| {
                levels.push(level_label(ds, &k));
                levels.len() - 1
            })
        })
        .collect();
    RandomBlock {
        term,
        label: term.label(with_year).to_string(),
        levels,
        index,
    }
}

/// Treatment-contrast columns (first level as reference) of a fixed term,
/// each given as a name and a per-record value.
fn fixed_columns(ds: &TrialDataset, term: Term) -> Vec<(String, Vec<f64>)> {
    let f = term.factors();
    let l = ds.levels();
    // (prefix, level names, per-record code) for each factor in the term
    let mut parts: Vec<(&str, &Vec<String>, Vec<usize>)> = Vec::new();
    if f.year {
        parts.push(("YR", &l.years, ds.codes().iter().map(|c| c.year).collect()));
    }
    if f.location {
        parts.push((
            "LC",
            &l.locations,
            ds.codes().iter().map(|c| c.location).collect(),
        ));
    }
    if f.genotype {
        parts.push((
            "CLT",
            &l.genotypes,
            ds.codes().iter().map(|c| c.genotype).collect(),
        ));
    }
    let mut cols: Vec<(String, Vec<f64>)> = vec![(String::new(), vec![1.0; ds.len()])];
    for (prefix, names, codes) in parts {
        let mut next = Vec::new();
        for (name, vals) in &cols {
            for lev in 1..names.len() {
                let n = if name.is_empty() {
                    format!("{prefix}{}", names[lev])
                } else {
                    format!("{name}:{prefix}{}", names[lev])
                };
                let v = vals
                    .iter()
                    .zip(&codes)
                    .map(|(&a, &c)| if c == lev { a } else { 0.0 })
                    .collect();
                next.push((n, v));
            }
        }
        cols = next;
    }
    cols
}

/// Builds `X` and the random blocks for `case`. Year terms are dropped, with a
/// warning, when the data has a single year.
pub fn build_model(ds: &TrialDataset, case: ModelCase) -> Result<ModelSpec, ModelError> {
    let levels = ds.levels();
    let with_year = levels.y() >= 2;
    let mut warnings = Vec::new();
    if !with_year {
        let msg = "single year level: terms involving YR dropped".to_string();
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let active = |t: Term| with_year || t == Term::Rep || !t.involves_year();

    for t in Term::ALL.into_iter().filter(|&t| active(t)) {
        let f = t.factors();
        let checks = [
            (f.location, levels.l(), "LC"),
            (f.genotype, levels.g(), "CLT"),
            (f.rep, levels.r(), "RP"),
        ];
        for (on, count, factor) in checks {
            if on && count < 2 {
                return Err(ModelError::InsufficientLevels {
                    term: t.label(with_year).into(),
                    factor: factor.into(),
                });
            }
        }
    }

    let fixed_terms: Vec<Term> = FIXED_ORDER
        .into_iter()
        .filter(|&t| active(t) && case.role(t) == Role::Fixed)
        .collect();
    let mut names = vec!["(Intercept)".to_string()];
    let mut columns = vec![vec![1.0; ds.len()]];
    for &t in &fixed_terms {
        for (n, v) in fixed_columns(ds, t) {
            names.push(n);
            columns.push(v);
        }
    }
    let mut x = Matrix::from_fn(ds.len(), columns.len(), |i, j| columns[j][i]);
    let y = ds.traits();

    let probe = ols(&y, &x)?;
    if !probe.aliased.is_empty() {
        let dropped: Vec<String> = probe.aliased.iter().map(|&j| names[j].clone()).collect();
        let msg = format!(
            "aliased fixed-effect columns dropped: {}",
            dropped.join(", ")
        );
        log::warn!("{msg}");
        warnings.push(msg);
        let keep: Vec<usize> = (0..names.len())
            .filter(|j| !probe.aliased.contains(j))
            .collect();
        x = Matrix::from_fn(ds.len(), keep.len(), |i, j| columns[keep[j]][i]);
        names = keep.iter().map(|&j| names[j].clone()).collect();
    }

    let random = RANDOM_ORDER
        .into_iter()
        .filter(|&t| active(t) && case.role(t) == Role::Random)
        .map(|t| random_block(ds, t, with_year))
        .collect();

    Ok(ModelSpec {
        case,
        with_year,
        fixed_terms,
        x,
        x_names: names,
        random,
        y,
        warnings,
    })
}
