//! Trial records, CSV ingestion and the genotype × environment tables built
//! from them.

use std::collections::{HashMap, HashSet};
use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::numerics::Matrix;

/// Level used for the year or rep of a dataset that has no such column.
pub const ABSENT_LEVEL: &str = ".";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DataError {
    #[error("malformed CSV at line {line}: {message}")]
    MalformedCsv { line: u64, message: String },
    #[error("line {line}: trait value {value:?} is not a number")]
    NonNumericTrait { line: u64, value: String },
    #[error("line {line}: trait value is not finite")]
    NonFiniteTrait { line: u64 },
    #[error("line {line}: empty {column} label")]
    EmptyLabel { line: u64, column: String },
    #[error(
        "duplicate record for year {year}, location {location}, rep {rep}, genotype {genotype}"
    )]
    DuplicateCell {
        year: String,
        location: String,
        rep: String,
        genotype: String,
    },
    #[error("dataset has no records")]
    EmptyDataset,
    #[error("column {0:?} not found in header")]
    MissingColumn(String),
    #[error("need at least 2 genotypes and 2 environments, found {genotypes} and {environments}")]
    TooFewLevels {
        genotypes: usize,
        environments: usize,
    },
    #[error("two-way table has {missing} empty cells")]
    IncompleteTable { missing: usize },
}

/// Maps dataset roles to CSV header names. Year and rep are optional.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMapping {
    pub year: Option<String>,
    pub location: String,
    pub rep: Option<String>,
    pub genotype: String,
    #[serde(rename = "trait")]
    pub trait_name: String,
}

impl Default for ColumnMapping {
    fn default() -> Self {
        Self {
            year: Some("YR".into()),
            location: "LC".into(),
            rep: Some("RP".into()),
            genotype: "CLT".into(),
            trait_name: "MY".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub year: String,
    pub location: String,
    pub rep: String,
    pub genotype: String,
    #[serde(rename = "trait")]
    pub trait_value: f64,
}

/// Integer codes of a record's factor levels, indices into [`Levels`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RecordCodes {
    pub year: usize,
    pub location: usize,
    pub rep: usize,
    pub genotype: usize,
}

/// Distinct levels of each factor in first-appearance order.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Levels {
    pub years: Vec<String>,
    pub locations: Vec<String>,
    pub reps: Vec<String>,
    pub genotypes: Vec<String>,
}

impl Levels {
    pub fn g(&self) -> usize {
        self.genotypes.len()
    }
    pub fn l(&self) -> usize {
        self.locations.len()
    }
    pub fn y(&self) -> usize {
        self.years.len()
    }
    pub fn r(&self) -> usize {
        self.reps.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Environment {
    pub location: String,
    pub year: Option<String>,
}

impl Environment {
    pub fn label(&self) -> String {
        match &self.year {
            Some(y) => format!("{}-{}", self.location, y),
            None => self.location.clone(),
        }
    }
}

impl fmt::Display for Environment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// How records are grouped into environments for two-way tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvironmentGrouping {
    /// One environment per location; years and reps are averaged.
    #[default]
    Location,
    /// One environment per observed (location, year) pair.
    LocationYear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub n_records: usize,
    pub trait_name: String,
    pub genotypes: usize,
    pub locations: usize,
    pub years: usize,
    pub reps: usize,
    pub environments: usize,
    pub balanced: bool,
    pub genotype_levels: Vec<String>,
    pub location_levels: Vec<String>,
    pub year_levels: Vec<String>,
}

/// Validated, immutable collection of trial records.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialDataset {
    records: Vec<TrialRecord>,
    codes: Vec<RecordCodes>,
    levels: Levels,
    columns: ColumnMapping,
}

fn intern(levels: &mut Vec<String>, index: &mut HashMap<String, usize>, label: &str) -> usize {
    if let Some(&i) = index.get(label) {
        return i;
    }
    levels.push(label.to_string());
    index.insert(label.to_string(), levels.len() - 1);
    levels.len() - 1
}

impl TrialDataset {
    /// Validates records and builds the level sets. `columns` is kept so the
    /// dataset can be written back with the same header.
    pub fn from_records(
        records: Vec<TrialRecord>,
        columns: ColumnMapping,
    ) -> Result<Self, DataError> {
        if records.is_empty() {
            return Err(DataError::EmptyDataset);
        }
        let mut levels = Levels::default();
        let mut idx: [HashMap<String, usize>; 4] = Default::default();
        let mut seen = HashSet::with_capacity(records.len());
        let mut codes = Vec::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            let line = i as u64 + 2;
            for (name, label) in [
                ("year", &r.year),
                ("location", &r.location),
                ("rep", &r.rep),
                ("genotype", &r.genotype),
            ] {
                if label.trim().is_empty() {
                    return Err(DataError::EmptyLabel {
                        line,
                        column: name.into(),
                    });
                }
            }
            if !r.trait_value.is_finite() {
                return Err(DataError::NonFiniteTrait { line });
            }
            let c = RecordCodes {
                year: intern(&mut levels.years, &mut idx[0], &r.year),
                location: intern(&mut levels.locations, &mut idx[1], &r.location),
                rep: intern(&mut levels.reps, &mut idx[2], &r.rep),
                genotype: intern(&mut levels.genotypes, &mut idx[3], &r.genotype),
            };
            if !seen.insert(c) {
                return Err(DataError::DuplicateCell {
                    year: r.year.clone(),
                    location: r.location.clone(),
                    rep: r.rep.clone(),
                    genotype: r.genotype.clone(),
                });
            }
            codes.push(c);
        }
        let ds = Self {
            records,
            codes,
            levels,
            columns,
        };
        let envs = ds.environments(EnvironmentGrouping::LocationYear).len();
        if ds.levels.g() < 2 || envs < 2 {
            return Err(DataError::TooFewLevels {
                genotypes: ds.levels.g(),
                environments: envs,
            });
        }
        Ok(ds)
    }

    pub fn records(&self) -> &[TrialRecord] {
        &self.records
    }

    pub fn codes(&self) -> &[RecordCodes] {
        &self.codes
    }

    pub fn levels(&self) -> &Levels {
        &self.levels
    }

    pub fn columns(&self) -> &ColumnMapping {
        &self.columns
    }

    pub fn trait_name(&self) -> &str {
        &self.columns.trait_name
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn traits(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.trait_value).collect()
    }

    pub fn has_years(&self) -> bool {
        self.columns.year.is_some()
    }

    /// Every (year, location, rep, genotype) combination observed exactly once.
    pub fn is_balanced(&self) -> bool {
        let l = &self.levels;
        self.records.len() == l.g() * l.l() * l.y() * l.r()
    }

    /// Environments in first-appearance order.
    pub fn environments(&self, grouping: EnvironmentGrouping) -> Vec<Environment> {
        let mut out: IndexMap<Environment, ()> = IndexMap::new();
        for r in &self.records {
            out.entry(self.environment_of(r, grouping)).or_default();
        }
        out.into_keys().collect()
    }

    pub fn environment_of(&self, r: &TrialRecord, grouping: EnvironmentGrouping) -> Environment {
        let year = match grouping {
            EnvironmentGrouping::LocationYear if self.has_years() => Some(r.year.clone()),
            _ => None,
        };
        Environment {
            location: r.location.clone(),
            year,
        }
    }

    pub fn summary(&self) -> DatasetSummary {
        let l = &self.levels;
        DatasetSummary {
            n_records: self.records.len(),
            trait_name: self.columns.trait_name.clone(),
            genotypes: l.g(),
            locations: l.l(),
            years: l.y(),
            reps: l.r(),
            environments: self.environments(EnvironmentGrouping::LocationYear).len(),
            balanced: self.is_balanced(),
            genotype_levels: l.genotypes.clone(),
            location_levels: l.locations.clone(),
            year_levels: if self.has_years() {
                l.years.clone()
            } else {
                Vec::new()
            },
        }
    }
}

fn header_index(headers: &csv::StringRecord, name: &str) -> Result<usize, DataError> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| DataError::MissingColumn(name.to_string()))
}

/// `base` with its year and rep columns dropped when the header lacks them.
/// Location, genotype and trait columns are left for [`parse_csv`] to check.
pub fn detect_mapping(bytes: &[u8], base: &ColumnMapping) -> Result<ColumnMapping, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let headers = reader.headers().map_err(|e| DataError::MalformedCsv {
        line: 1,
        message: e.to_string(),
    })?;
    let present = |name: &Option<String>| {
        name.as_ref()
            .filter(|n| headers.iter().any(|h| h == n.as_str()))
            .cloned()
    };
    Ok(ColumnMapping {
        year: present(&base.year),
        rep: present(&base.rep),
        ..base.clone()
    })
}

/// Parses UTF-8 CSV with a header row.
pub fn parse_csv(bytes: &[u8], columns: &ColumnMapping) -> Result<TrialDataset, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let headers = reader
        .headers()
        .map_err(|e| DataError::MalformedCsv {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let year_col = columns
        .year
        .as_deref()
        .map(|n| header_index(&headers, n))
        .transpose()?;
    let rep_col = columns
        .rep
        .as_deref()
        .map(|n| header_index(&headers, n))
        .transpose()?;
    let loc_col = header_index(&headers, &columns.location)?;
    let gen_col = header_index(&headers, &columns.genotype)?;
    let trait_col = header_index(&headers, &columns.trait_name)?;

    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| DataError::MalformedCsv {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let field = |c: usize| row.get(c).unwrap_or("").to_string();
        let raw = field(trait_col);
        let trait_value: f64 = raw.parse().map_err(|_| DataError::NonNumericTrait {
            line,
            value: raw.clone(),
        })?;
        if !trait_value.is_finite() {
            return Err(DataError::NonFiniteTrait { line });
        }
        let rec = TrialRecord {
            year: year_col.map_or_else(|| ABSENT_LEVEL.to_string(), field),
            location: field(loc_col),
            rep: rep_col.map_or_else(|| ABSENT_LEVEL.to_string(), field),
            genotype: field(gen_col),
            trait_value,
        };
        for (name, label) in [
            ("year", &rec.year),
            ("location", &rec.location),
            ("rep", &rec.rep),
            ("genotype", &rec.genotype),
        ] {
            if label.is_empty() {
                return Err(DataError::EmptyLabel {
                    line,
                    column: name.into(),
                });
            }
        }
        records.push(rec);
    }
    TrialDataset::from_records(records, columns.clone())
}

/// Writes the dataset with the header names of its column mapping.
pub fn to_csv(ds: &TrialDataset) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let c = ds.columns();
    let mut header: Vec<&str> = Vec::new();
    if let Some(y) = &c.year {
        header.push(y);
    }
    header.push(&c.location);
    if let Some(r) = &c.rep {
        header.push(r);
    }
    header.push(&c.genotype);
    header.push(&c.trait_name);
    w.write_record(&header)
        .expect("writing to a Vec cannot fail");
    for r in ds.records() {
        let mut row: Vec<String> = Vec::with_capacity(5);
        if c.year.is_some() {
            row.push(r.year.clone());
        }
        row.push(r.location.clone());
        if c.rep.is_some() {
            row.push(r.rep.clone());
        }
        row.push(r.genotype.clone());
        row.push(format!("{}", r.trait_value));
        w.write_record(&row).expect("writing to a Vec cannot fail");
    }
    String::from_utf8(w.into_inner().expect("flush to Vec")).expect("CSV output is UTF-8")
}

/// Genotype × environment cell means with their replicate counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoWayTable {
    pub genotypes: Vec<String>,
    pub environments: Vec<Environment>,
    /// `values[i][e]`, `None` for an empty cell.
    pub values: Vec<Vec<Option<f64>>>,
    pub cell_counts: Vec<Vec<usize>>,
    pub genotype_means: Vec<f64>,
    pub environment_means: Vec<f64>,
    pub grand_mean: f64,
    pub complete: bool,
}

impl TwoWayTable {
    pub fn n_genotypes(&self) -> usize {
        self.genotypes.len()
    }

    pub fn n_environments(&self) -> usize {
        self.environments.len()
    }

    pub fn environment_labels(&self) -> Vec<String> {
        self.environments.iter().map(Environment::label).collect()
    }

    /// Cell means as a dense matrix; fails on empty cells.
    pub fn complete_matrix(&self) -> Result<Matrix, DataError> {
        let missing = self.values.iter().flatten().filter(|v| v.is_none()).count();
        if missing > 0 {
            return Err(DataError::IncompleteTable { missing });
        }
        Ok(Matrix::from_fn(
            self.n_genotypes(),
            self.n_environments(),
            |i, e| self.values[i][e].unwrap_or_default(),
        ))
    }

    /// Builds a complete table directly from a matrix of cell means (one
    /// observation per cell). Mostly useful for tests and simulations.
    pub fn from_matrix(genotypes: Vec<String>, environments: Vec<Environment>, m: &Matrix) -> Self {
        let g = m.rows();
        let e = m.cols();
        let values = (0..g)
            .map(|i| (0..e).map(|j| Some(m[(i, j)])).collect())
            .collect();
        let genotype_means = (0..g)
            .map(|i| m.row(i).iter().sum::<f64>() / e as f64)
            .collect();
        let environment_means = (0..e)
            .map(|j| (0..g).map(|i| m[(i, j)]).sum::<f64>() / g as f64)
            .collect();
        let grand_mean = m.as_slice().iter().sum::<f64>() / (g * e) as f64;
        Self {
            genotypes,
            environments,
            values,
            cell_counts: vec![vec![1; e]; g],
            genotype_means,
            environment_means,
            grand_mean,
            complete: true,
        }
    }
}

/// Cell means over reps (and over years when grouping by location).
/// Marginal means are count-weighted means of the raw observations.
pub fn two_way_means(ds: &TrialDataset, grouping: EnvironmentGrouping) -> TwoWayTable {
    let envs = ds.environments(grouping);
    let env_index: HashMap<&Environment, usize> =
        envs.iter().enumerate().map(|(i, e)| (e, i)).collect();
    let g = ds.levels().g();
    let e = envs.len();
    let mut sums = vec![vec![0.0; e]; g];
    let mut counts = vec![vec![0usize; e]; g];
    for (r, c) in ds.records().iter().zip(ds.codes()) {
        let env = ds.environment_of(r, grouping);
        let j = env_index[&env];
        sums[c.genotype][j] += r.trait_value;
        counts[c.genotype][j] += 1;
    }
    let values: Vec<Vec<Option<f64>>> = sums
        .iter()
        .zip(&counts)
        .map(|(s, n)| {
            s.iter()
                .zip(n)
                .map(|(&s, &n)| (n > 0).then(|| s / n as f64))
                .collect()
        })
        .collect();
    let row_total = |i: usize| (sums[i].iter().sum::<f64>(), counts[i].iter().sum::<usize>());
    let genotype_means = (0..g)
        .map(|i| {
            let (s, n) = row_total(i);
            s / n as f64
        })
        .collect();
    let environment_means = (0..e)
        .map(|j| {
            let s: f64 = (0..g).map(|i| sums[i][j]).sum();
            let n: usize = (0..g).map(|i| counts[i][j]).sum();
            s / n as f64
        })
        .collect();
    let total: f64 = sums.iter().flatten().sum();
    let complete = counts.iter().flatten().all(|&n| n > 0);
    TwoWayTable {
        genotypes: ds.levels().genotypes.clone(),
        environments: envs,
        values,
        cell_counts: counts,
        genotype_means,
        environment_means,
        grand_mean: total / ds.len() as f64,
        complete,
    }
}

/// Mean trait of all genotypes and reps in each environment.
pub fn environment_index(
    ds: &TrialDataset,
    grouping: EnvironmentGrouping,
) -> IndexMap<Environment, f64> {
    let mut acc: IndexMap<Environment, (f64, usize)> = IndexMap::new();
    for r in ds.records() {
        let e = acc.entry(ds.environment_of(r, grouping)).or_default();
        e.0 += r.trait_value;
        e.1 += 1;
    }
    acc.into_iter()
        .map(|(k, (s, n))| (k, s / n as f64))
        .collect()
}
