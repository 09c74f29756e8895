//! Balanced-data ANOVA and expected-mean-square F tests for fixed terms.
//!
//! Sums of squares come from inclusion–exclusion over marginal means, with
//! reps nested in year × location. Expected mean squares follow the
//! unrestricted mixed model: a random term `B` contributes to `E[MS_A]` when
//! its factors include all of `A`'s. The error term of a fixed term is the
//! linear combination of random-term mean squares with the same expectation
//! under H₀; when that is not a single mean square, a Satterthwaite quasi-F is
//! used.

use serde::{Deserialize, Serialize};

use crate::data::{RecordCodes, TrialDataset};
use crate::numerics::Distribution;

use super::{DegreesOfFreedom, ModelCase, ModelError, Role, Term};

/// Denominator used for one F test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorStratum {
    /// Weighted mean squares, `(source label, weight)`.
    pub components: Vec<(String, f64)>,
    pub mean_square: f64,
    pub df: f64,
    /// Single mean square with unit weight (no Satterthwaite step).
    pub exact: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnovaRow {
    /// `None` for the residual line.
    pub term: Option<Term>,
    pub label: String,
    pub role: Role,
    pub df: usize,
    pub sum_sq: f64,
    pub mean_square: f64,
    pub f_value: Option<f64>,
    pub df_num: Option<f64>,
    pub df_den: Option<f64>,
    pub p_value: Option<f64>,
    pub error: Option<ErrorStratum>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalancedAnova {
    pub case: ModelCase,
    pub rows: Vec<AnovaRow>,
    pub total_sum_sq: f64,
}

impl BalancedAnova {
    pub fn row(&self, term: Term) -> Option<&AnovaRow> {
        self.rows.iter().find(|r| r.term == Some(term))
    }

    pub fn residual(&self) -> &AnovaRow {
        self.rows.last().expect("residual row always present")
    }
}

/// Which factors index a marginal mean: year, location, rep, genotype.
type Mask = [bool; 4];

struct Margins<'a> {
    codes: &'a [RecordCodes],
    sizes: [usize; 4],
    y: Vec<f64>,
}

impl Margins<'_> {
    fn cell(&self, c: &RecordCodes, m: Mask) -> usize {
        let vals = [c.year, c.location, c.rep, c.genotype];
        let mut idx = 0;
        for k in 0..4 {
            if m[k] {
                idx = idx * self.sizes[k] + vals[k];
            }
        }
        idx
    }

    /// Per-record marginal mean over the factors in `m`.
    fn means(&self, m: Mask) -> Vec<f64> {
        let cells: usize = (0..4).filter(|&k| m[k]).map(|k| self.sizes[k]).product();
        let mut sum = vec![0.0; cells];
        let mut cnt = vec![0usize; cells];
        let idx: Vec<usize> = self.codes.iter().map(|c| self.cell(c, m)).collect();
        for (&i, &v) in idx.iter().zip(&self.y) {
            sum[i] += v;
            cnt[i] += 1;
        }
        idx.iter().map(|&i| sum[i] / cnt[i] as f64).collect()
    }

    /// Sum of squares of the crossed effect on the factors in `m` (no rep).
    fn crossed_ss(&self, m: Mask) -> f64 {
        let on: Vec<usize> = (0..4).filter(|&k| m[k]).collect();
        let mut effect = vec![0.0; self.y.len()];
        for subset in 0..(1u32 << on.len()) {
            let mut sub = [false; 4];
            for (bit, &k) in on.iter().enumerate() {
                sub[k] = subset & (1 << bit) != 0;
            }
            let sign = if (on.len() - subset.count_ones() as usize).is_multiple_of(2) {
                1.0
            } else {
                -1.0
            };
            for (e, v) in effect.iter_mut().zip(self.means(sub)) {
                *e += sign * v;
            }
        }
        effect.iter().map(|e| e * e).sum()
    }
}

fn mask(term: Term) -> Mask {
    let f = term.factors();
    [f.year, f.location, f.rep, f.genotype]
}

fn contains(outer: Mask, inner: Mask) -> bool {
    (0..4).all(|k| !inner[k] || outer[k])
}

/// Full balanced ANOVA with F tests for the fixed terms of `case`.
pub fn balanced_anova(ds: &TrialDataset, case: ModelCase) -> Result<BalancedAnova, ModelError> {
    if !ds.is_balanced() {
        return Err(ModelError::UnbalancedData);
    }
    let lv = ds.levels();
    let with_year = lv.y() >= 2;
    for (count, factor, term) in [
        (lv.l(), "LC", "LC"),
        (lv.g(), "CLT", "CLT"),
        (lv.r(), "RP", "RP"),
    ] {
        if count < 2 {
            return Err(ModelError::InsufficientLevels {
                term: term.into(),
                factor: factor.into(),
            });
        }
    }
    let mg = Margins {
        codes: ds.codes(),
        sizes: [lv.y(), lv.l(), lv.r(), lv.g()],
        y: ds.traits(),
    };
    let n = ds.len() as f64;
    let grand = mg.y.iter().sum::<f64>() / n;
    let total_sum_sq: f64 = mg.y.iter().map(|v| (v - grand).powi(2)).sum();
    let dfs = DegreesOfFreedom::from_levels(lv);

    let terms: Vec<Term> = Term::REPORT_ORDER
        .into_iter()
        .filter(|t| with_year || *t == Term::Rep || !t.involves_year())
        .collect();

    let yl = mg.means([true, true, false, false]);
    let ylr = mg.means([true, true, true, false]);
    let ylg = mg.means([true, true, false, true]);
    let mut rows: Vec<AnovaRow> = terms
        .iter()
        .map(|&t| {
            let ss = if t == Term::Rep {
                ylr.iter().zip(&yl).map(|(a, b)| (a - b).powi(2)).sum()
            } else {
                mg.crossed_ss(mask(t))
            };
            let df = dfs.of(t);
            AnovaRow {
                term: Some(t),
                label: t.label(with_year).to_string(),
                role: case.role(t),
                df,
                sum_sq: ss,
                mean_square: ss / df as f64,
                f_value: None,
                df_num: None,
                df_den: None,
                p_value: None,
                error: None,
            }
        })
        .collect();
    let resid_ss: f64 = (0..mg.y.len())
        .map(|i| (mg.y[i] - ylr[i] - ylg[i] + yl[i]).powi(2))
        .sum();
    let resid_df = dfs.residual;
    let resid_ms = resid_ss / resid_df as f64;

    // Expected-mean-square bookkeeping over the random terms.
    let random: Vec<(Mask, usize)> = rows
        .iter()
        .enumerate()
        .filter(|(_, r)| r.role == Role::Random)
        .map(|(i, r)| (mask(r.term.expect("term row")), i))
        .collect();
    for i in 0..rows.len() {
        if rows[i].role != Role::Fixed {
            continue;
        }
        let a = mask(rows[i].term.expect("term row"));
        let mut order = random.clone();
        order.sort_by_key(|(m, _)| m.iter().filter(|b| **b).count());
        let mut w: Vec<(usize, f64)> = Vec::new();
        for &(b, idx) in &order {
            let target = if contains(b, a) { 1.0 } else { 0.0 };
            let below: f64 = w
                .iter()
                .filter(|(j, _)| {
                    let d = random.iter().find(|(_, k)| k == j).expect("random").0;
                    d != b && contains(b, d)
                })
                .map(|(_, v)| v)
                .sum();
            w.push((idx, target - below));
        }
        let used: f64 = w.iter().map(|(_, v)| v).sum();
        let mut parts: Vec<(String, f64, f64, f64)> = w
            .iter()
            .filter(|(_, v)| v.abs() > 1e-12)
            .map(|&(j, v)| {
                (
                    rows[j].label.clone(),
                    v,
                    rows[j].mean_square,
                    rows[j].df as f64,
                )
            })
            .collect();
        if (1.0 - used).abs() > 1e-12 {
            parts.push(("residual".into(), 1.0 - used, resid_ms, resid_df as f64));
        }
        let satterthwaite = |terms: &[(f64, f64, f64)]| -> (f64, f64) {
            let ms: f64 = terms.iter().map(|(w, m, _)| w * m).sum();
            let den: f64 = terms.iter().map(|(w, m, d)| (w * m).powi(2) / d).sum();
            (
                ms,
                if den > 0.0 {
                    ms * ms / den
                } else {
                    f64::INFINITY
                },
            )
        };
        let pos: Vec<(f64, f64, f64)> = parts
            .iter()
            .filter(|p| p.1 > 0.0)
            .map(|p| (p.1, p.2, p.3))
            .collect();
        let mut num: Vec<(f64, f64, f64)> = vec![(1.0, rows[i].mean_square, rows[i].df as f64)];
        num.extend(parts.iter().filter(|p| p.1 < 0.0).map(|p| (-p.1, p.2, p.3)));
        let (den_ms, den_df) = satterthwaite(&pos);
        let (num_ms, num_df) = if num.len() == 1 {
            (rows[i].mean_square, rows[i].df as f64)
        } else {
            satterthwaite(&num)
        };
        let exact = parts.len() == 1 && (parts[0].1 - 1.0).abs() < 1e-12;
        let (f, p) = if num_ms == 0.0 {
            (0.0, 1.0)
        } else if den_ms <= 0.0 {
            (f64::INFINITY, 0.0)
        } else {
            let f = num_ms / den_ms;
            let p = Distribution::f(num_df, den_df).map_or(f64::NAN, |d| d.sf(f));
            (f, p)
        };
        rows[i].f_value = Some(f);
        rows[i].df_num = Some(num_df);
        rows[i].df_den = Some(den_df);
        rows[i].p_value = Some(p);
        rows[i].error = Some(ErrorStratum {
            components: parts.iter().map(|p| (p.0.clone(), p.1)).collect(),
            mean_square: den_ms,
            df: den_df,
            exact,
        });
    }

    rows.push(AnovaRow {
        term: None,
        label: "residual".into(),
        role: Role::Random,
        df: resid_df,
        sum_sq: resid_ss,
        mean_square: resid_ms,
        f_value: None,
        df_num: None,
        df_den: None,
        p_value: None,
        error: None,
    });
    Ok(BalancedAnova {
        case,
        rows,
        total_sum_sq,
    })
}

/// F tests of the fixed terms of `case` (rows with an F value only) plus the
/// residual line.
pub fn test_fixed_terms(ds: &TrialDataset, case: ModelCase) -> Result<Vec<AnovaRow>, ModelError> {
    let a = balanced_anova(ds, case)?;
    let rows: Vec<AnovaRow> = a
        .rows
        .into_iter()
        .filter(|r| r.role == Role::Fixed || r.term.is_none())
        .collect();
    if rows.len() == 1 {
        return Err(ModelError::NothingToTest("fixed"));
    }
    Ok(rows)
}
