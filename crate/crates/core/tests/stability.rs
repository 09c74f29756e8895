use gxestat_core::data::{
    parse_csv, two_way_means, ColumnMapping, Environment, EnvironmentGrouping, TrialDataset,
    TrialRecord, TwoWayTable,
};
use gxestat_core::numerics::Matrix;
use gxestat_core::stability::{
    coefficient_of_variation, fit_stability_glm, kang_ys, lin_binns, regression_stability, shukla,
    shukla_sigma2, stability_report, wricke, ShuklaStats, StabilityError, StabilityOptions,
    StabilityReport,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn table(rows: &[&[f64]]) -> TwoWayTable {
    let g = rows.len();
    let e = rows[0].len();
    let m = Matrix::from_fn(g, e, |i, j| rows[i][j]);
    from_matrix(&m)
}

fn from_matrix(m: &Matrix) -> TwoWayTable {
    let genotypes = (0..m.rows()).map(|i| format!("G{i}")).collect();
    let envs = (0..m.cols())
        .map(|j| Environment {
            location: format!("E{j}"),
            year: None,
        })
        .collect();
    TwoWayTable::from_matrix(genotypes, envs, m)
}

fn layout(
    y: usize,
    l: usize,
    r: usize,
    g: usize,
    mut f: impl FnMut(usize, usize, usize, usize) -> f64,
) -> TrialDataset {
    let mut recs = Vec::new();
    for yi in 0..y {
        for li in 0..l {
            for ri in 0..r {
                for gi in 0..g {
                    recs.push(TrialRecord {
                        year: format!("{}", 2001 + yi),
                        location: format!("L{li}"),
                        rep: format!("{}", ri + 1),
                        genotype: format!("G{gi}"),
                        trait_value: f(yi, li, ri, gi),
                    });
                }
            }
        }
    }
    TrialDataset::from_records(recs, ColumnMapping::default()).unwrap()
}

fn simulated(seed: u64, y: usize, l: usize, r: usize, g: usize) -> TrialDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut n = move |sd: f64| sd * rng.sample::<f64, _>(StandardNormal);
    let lc: Vec<f64> = (0..l).map(|_| n(8.0)).collect();
    let yl: Vec<f64> = (0..y * l).map(|_| n(3.0)).collect();
    let gen: Vec<f64> = (0..g).map(|_| n(5.0)).collect();
    let sens: Vec<f64> = (0..g).map(|_| 1.0 + n(0.3)).collect();
    let gl: Vec<f64> = (0..g * l * y).map(|_| n(2.0)).collect();
    let rep: Vec<f64> = (0..y * l * r).map(|_| n(2.0)).collect();
    let noise: Vec<f64> = (0..y * l * r * g).map(|_| n(3.0)).collect();
    layout(y, l, r, g, |yi, li, ri, gi| {
        let env = lc[li] + yl[yi * l + li];
        60.0 + gen[gi]
            + sens[gi] * env
            + gl[(yi * l + li) * g + gi]
            + rep[(yi * l + li) * r + ri]
            + noise[((yi * l + li) * r + ri) * g + gi]
    })
}

fn synthetic_watermelon() -> TrialDataset {
    let bytes = std::fs::read(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/../../fixtures/synthetic/watermelon_layout.csv"
    ))
    .unwrap();
    parse_csv(&bytes, &ColumnMapping::default()).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-12)
}

#[test]
fn additive_table_has_zero_ecovalence() {
    let t = table(&[&[1.0, 4.0, 2.0], &[3.0, 6.0, 4.0], &[0.0, 3.0, 1.0]]);
    for w in wricke(&t).unwrap() {
        assert!(w.abs() < 1e-24);
    }
    // All σ² then come out as 0, which is the largest they can be here.
    let sh = shukla(&t, 1.0, 10, 1).unwrap();
    assert!(sh.iter().all(|s| s.sigma2 <= 1e-12));
}

#[test]
fn ecovalence_matches_double_loop() {
    let rows: [&[f64]; 3] = [&[5.0, 7.0, 2.0], &[1.0, 9.0, 4.0], &[3.0, 3.0, 8.0]];
    let t = table(&rows);
    let gm: Vec<f64> = rows.iter().map(|r| r.iter().sum::<f64>() / 3.0).collect();
    let em: Vec<f64> = (0..3)
        .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / 3.0)
        .collect();
    let grand = gm.iter().sum::<f64>() / 3.0;
    let w = wricke(&t).unwrap();
    for i in 0..3 {
        let mut s = 0.0;
        for j in 0..3 {
            s += (rows[i][j] - gm[i] - em[j] + grand).powi(2);
        }
        assert!((w[i] - s).abs() < 1e-12);
    }
}

#[test]
fn sigma2_from_published_ecovalences() {
    // (W², σ²) pairs for ten genotypes in five environments.
    let published = [
        (279.747, 61.347),
        (1488.636, 439.125),
        (893.772, 253.230),
        (1044.349, 300.285),
        (250.518, 52.213),
        (1003.097, 287.394),
        (685.374, 188.105),
        (348.425, 82.809),
        (586.607, 157.241),
        (928.836, 264.187),
    ];
    let w: Vec<f64> = published.iter().map(|p| p.0).collect();
    let s = shukla_sigma2(&w, 5);
    for ((_, want), got) in published.iter().zip(&s) {
        assert!(rel(*got, *want) < 1e-3, "{got} vs {want}");
    }
}

/// Direct evaluation of both Shukla statistics for a small table.
#[test]
fn shukla_matches_direct_formula() {
    let rows: [&[f64]; 4] = [
        &[10.0, 12.0, 15.0],
        &[9.0, 14.0, 13.0],
        &[11.0, 10.0, 18.0],
        &[8.0, 13.0, 12.5],
    ];
    let t = table(&rows);
    let (g, e) = (4.0, 3.0);
    let gm: Vec<f64> = rows.iter().map(|r| r.iter().sum::<f64>() / e).collect();
    let em: Vec<f64> = (0..3)
        .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / g)
        .collect();
    let grand = gm.iter().sum::<f64>() / g;
    let z: Vec<Vec<f64>> = (0..4)
        .map(|i| (0..3).map(|j| rows[i][j] - gm[i] - em[j] + grand).collect())
        .collect();
    let w: Vec<f64> = z.iter().map(|r| r.iter().map(|v| v * v).sum()).collect();
    let idx: Vec<f64> = em.iter().map(|m| m - grand).collect();
    let ii: f64 = idx.iter().map(|v| v * v).sum();
    let s: Vec<f64> = z
        .iter()
        .map(|r| {
            let b = r.iter().zip(&idx).map(|(a, b)| a * b).sum::<f64>() / ii;
            r.iter().zip(&idx).map(|(a, x)| (a - b * x).powi(2)).sum()
        })
        .collect();
    let ws: f64 = w.iter().sum();
    let ss: f64 = s.iter().sum();
    let got = shukla(&t, 2.0, 20, 3).unwrap();
    for i in 0..4 {
        let sigma2 = (g * (g - 1.0) * w[i] - ws) / ((e - 1.0) * (g - 1.0) * (g - 2.0));
        let s2 = g / ((g - 2.0) * (e - 2.0)) * (s[i] - ss / (g * (g - 1.0)));
        assert!((got[i].sigma2 - sigma2).abs() < 1e-10);
        assert!((got[i].ssquares - s2).abs() < 1e-10);
        assert!((0.0..=1.0).contains(&got[i].sigma2_p));
    }
}

#[test]
fn shukla_needs_three_genotypes() {
    let t = table(&[&[1.0, 2.0, 3.0], &[2.0, 2.0, 5.0]]);
    assert_eq!(
        shukla(&t, 1.0, 5, 1).unwrap_err(),
        StabilityError::TooFewGenotypes(2)
    );
}

#[test]
fn identical_genotypes_tie_and_none_is_selected() {
    let row: &[f64] = &[5.0, 6.0, 7.0];
    let t = table(&[row; 4]);
    let sh = shukla(&t, 1.0, 30, 1).unwrap();
    let k = kang_ys(&t, &sh, 1.0, 30, 1, 0.05).unwrap();
    let first = k.scores[0].ys;
    assert!(k.scores.iter().all(|s| s.ys == first && !s.selected));
}

/// Five genotypes, error MS 2 on 40 df, one rep: LSD = t₀.₉₇₅,₄₀ · √(2·2/3).
#[test]
fn kang_procedure_by_hand() {
    let rows: [&[f64]; 5] = [
        &[20.0, 22.0, 24.0],
        &[14.0, 16.0, 18.0],
        &[15.0, 18.0, 15.0],
        &[13.0, 15.0, 17.0],
        &[12.0, 12.0, 18.0],
    ];
    let t = table(&rows);
    // Stability ratings forced through the σ² p-values.
    let sh: Vec<ShuklaStats> = [0.5, 0.5, 0.07, 0.03, 0.001]
        .iter()
        .map(|&p| ShuklaStats {
            sigma2: 1.0,
            sigma2_p: p,
            ssquares: 1.0,
            ssquares_p: 0.5,
        })
        .collect();
    let k = kang_ys(&t, &sh, 2.0, 40, 1, 0.05).unwrap();
    let lsd = 2.021_075_390_306_273 * (4.0f64 / 3.0).sqrt();
    assert!((k.lsd - lsd).abs() < 1e-9);
    // means 22, 16, 16, 15, 14 around 16.6; LSD ≈ 2.334
    let ranks: Vec<i64> = k.scores.iter().map(|s| s.rank).collect();
    assert_eq!(ranks, vec![5, 3, 3, 2, 1]);
    let adj: Vec<i64> = k.scores.iter().map(|s| s.adjustment).collect();
    assert_eq!(adj, vec![2, 0, 0, 0, -1]);
    let rating: Vec<i64> = k.scores.iter().map(|s| s.stability_rating).collect();
    assert_eq!(rating, vec![0, 0, -2, -4, -8]);
    let ys: Vec<i64> = k.scores.iter().map(|s| s.ys).collect();
    assert_eq!(ys, vec![7, 3, 1, -2, -8]);
    assert!((k.mean_ys - 0.2).abs() < 1e-12);
    let sel: Vec<bool> = k.scores.iter().map(|s| s.selected).collect();
    assert_eq!(sel, vec![true, true, true, false, false]);
}

#[test]
fn coefficient_of_variation_examples() {
    let t = table(&[&[8.0, 12.0], &[5.0, 5.0], &[1.0, 3.0]]);
    let cv = coefficient_of_variation(&t).unwrap();
    assert!((cv[0] - 28.284_271_247_461_9).abs() < 1e-9);
    assert_eq!(cv[1], 0.0);
    let z = table(&[&[-1.0, 1.0], &[1.0, 2.0]]);
    assert!(matches!(coefficient_of_variation(&z), Err(StabilityError::ZeroMean(g)) if g == "G0"));
}

#[test]
fn lin_binns_examples() {
    let d = 1.5;
    let t = table(&[&[10.0, 20.0], &[10.0 - d, 20.0 - d]]);
    let p = lin_binns(&t).unwrap();
    assert_eq!(p[0], 0.0);
    assert!((p[1] - d * d / 2.0).abs() < 1e-12);
}

#[test]
fn genotype_tracking_the_index_has_unit_slope() {
    // G0 is the mean of G1 and G2 everywhere, so it equals the group index.
    let ds = layout(1, 4, 3, 3, |_, l, r, g| {
        let base = 10.0 + 3.0 * l as f64 + 0.7 * (r as f64) * (l as f64 + 1.0);
        let dev = ((l * 7 + r * 3) % 5) as f64 - 2.0;
        match g {
            0 => base,
            1 => base + dev,
            _ => base - dev,
        }
    });
    let r = regression_stability(&ds, "G0", &StabilityOptions::default()).unwrap();
    assert!((r.slope - 1.0).abs() < 1e-10);
    assert!(r.deviation_ms < 1e-20);
}

#[test]
fn slopes_average_to_one() {
    let ds = simulated(9, 2, 4, 3, 6);
    let rep = stability_report(&ds, &StabilityOptions::default()).unwrap();
    let sum: f64 = rep.rows.iter().map(|r| r.slope).sum();
    assert!((sum - 6.0).abs() < 1e-9);
    let yl = StabilityOptions {
        grouping: EnvironmentGrouping::LocationYear,
        ..Default::default()
    };
    let rep = stability_report(&ds, &yl).unwrap();
    let sum: f64 = rep.rows.iter().map(|r| r.slope).sum();
    assert!((sum - 6.0).abs() < 1e-9);
}

#[test]
fn regression_errors() {
    let ds = simulated(1, 1, 2, 2, 3);
    assert!(matches!(
        regression_stability(&ds, "G0", &StabilityOptions::default()),
        Err(StabilityError::TooFewEnvironments { found: 2, .. })
    ));
    let ds = simulated(1, 1, 4, 2, 3);
    assert!(matches!(
        regression_stability(&ds, "nope", &StabilityOptions::default()),
        Err(StabilityError::UnknownGenotype(_))
    ));
    let flat = layout(1, 3, 2, 3, |_, _, _, g| g as f64);
    assert!(matches!(
        regression_stability(&flat, "G0", &StabilityOptions::default()),
        Err(StabilityError::CollinearIndex)
    ));
}

#[test]
fn single_rep_index_drops_environment_block() {
    let ds = simulated(3, 1, 5, 1, 4);
    // One observation per genotype and location: no pooled error, so go
    // through the regression alone.
    let r = gxestat_core::stability::regression_stability_with_error(
        &ds,
        "G1",
        EnvironmentGrouping::Location,
        None,
    )
    .unwrap();
    assert!(r.environment_block_dropped);
    assert_eq!(r.deviation_df, 3);
    assert!(r.deviation_f_p.is_none());
}

#[test]
fn glm_without_years_drops_year_terms() {
    let ds = simulated(2, 1, 3, 2, 4);
    let glm = fit_stability_glm(&ds).unwrap();
    let labels: Vec<&str> = glm.terms.iter().map(|t| t.label.as_str()).collect();
    assert_eq!(labels, vec!["LC", "LC * RP", "CLT", "LC * CLT"]);
    assert_eq!(glm.residual_df, (2 - 1) * (4 - 1) * 3);
}

#[test]
fn glm_residual_is_within_cell_variation() {
    let (y, l, r, g) = (2, 3, 3, 4);
    let ds = simulated(8, y, l, r, g);
    let glm = fit_stability_glm(&ds).unwrap();
    let mut x = vec![vec![vec![vec![0.0; g]; r]; l]; y];
    for (c, rec) in ds.codes().iter().zip(ds.records()) {
        x[c.year][c.location][c.rep][c.genotype] = rec.trait_value;
    }
    let mut ss = 0.0;
    for a in 0..y {
        for b in 0..l {
            let yl: f64 = x[a][b].iter().flatten().sum::<f64>() / (r * g) as f64;
            for c in 0..r {
                let ylr: f64 = x[a][b][c].iter().sum::<f64>() / g as f64;
                for d in 0..g {
                    let ylg: f64 = (0..r).map(|k| x[a][b][k][d]).sum::<f64>() / r as f64;
                    ss += (x[a][b][c][d] - ylr - ylg + yl).powi(2);
                }
            }
        }
    }
    assert!(rel(glm.residual_ss, ss) < 1e-9);
    assert_eq!(glm.residual_df, (r - 1) * (g - 1) * l * y);
}

#[test]
fn interaction_sums_of_squares_equal_total_ecovalence() {
    let ds = synthetic_watermelon();
    let glm = fit_stability_glm(&ds).unwrap();
    let lv = ds.levels();
    let (yr, reps) = (lv.y() as f64, lv.r() as f64);

    let by_loc: f64 = wricke(&two_way_means(&ds, EnvironmentGrouping::Location))
        .unwrap()
        .iter()
        .sum();
    let gl = glm.term("LC * CLT").unwrap().sum_sq;
    assert!(rel(gl, yr * reps * by_loc) < 1e-9);

    let by_env: f64 = wricke(&two_way_means(&ds, EnvironmentGrouping::LocationYear))
        .unwrap()
        .iter()
        .sum();
    let ge: f64 = ["LC * CLT", "YR * CLT", "YR * LC * CLT"]
        .iter()
        .map(|t| glm.term(t).unwrap().sum_sq)
        .sum();
    assert!(rel(ge, reps * by_env) < 1e-9);
}

#[test]
fn additive_trial_reports_no_interaction() {
    let ds = layout(1, 4, 3, 3, |_, l, r, g| {
        10.0 * g as f64 + 4.0 * l as f64 + ((l * 5 + r * 7 + g * 3) % 4) as f64 * 0.25 - 0.375
            + 0.1 * r as f64
    });
    let ds = {
        // Remove the genotype × location part of the noise so the table is additive.
        let t = two_way_means(&ds, EnvironmentGrouping::Location);
        let z = gxestat_core::stability::interaction_effects(&t).unwrap();
        let recs = ds
            .records()
            .iter()
            .zip(ds.codes())
            .map(|(r, c)| TrialRecord {
                trait_value: r.trait_value - z[(c.genotype, c.location)],
                ..r.clone()
            })
            .collect();
        TrialDataset::from_records(recs, ColumnMapping::default()).unwrap()
    };
    let rep = stability_report(&ds, &StabilityOptions::default()).unwrap();
    for r in &rep.rows {
        assert!(r.wricke_w2 < 1e-20);
        assert!(r.sigma2.abs() < 1e-10);
        assert_eq!(r.sigma2_marks, "ns");
        assert_eq!(r.ssquares_marks, "ns");
    }
}

#[test]
fn report_csv_round_trips() {
    let ds = synthetic_watermelon();
    let rep = stability_report(&ds, &StabilityOptions::default()).unwrap();
    let csv = rep.to_csv();
    assert!(csv.starts_with("genotype,slope,deviation_ms,sigma2,ssquares,wricke_w2,kang_ys,"));
    let rows = StabilityReport::rows_from_csv(&csv).unwrap();
    assert_eq!(rows, rep.rows);
    let names: Vec<&str> = rep.rows.iter().map(|r| r.genotype.as_str()).collect();
    let levels: Vec<&str> = ds.levels().genotypes.iter().map(String::as_str).collect();
    assert_eq!(names, levels);
    let text = rep.to_text();
    assert_eq!(text.lines().count(), 11);
}

#[test]
fn watermelon_sized_report_is_fast() {
    let ds = synthetic_watermelon();
    let t = std::time::Instant::now();
    stability_report(&ds, &StabilityOptions::default()).unwrap();
    assert!(t.elapsed().as_secs_f64() < 2.0);
}

fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let rank = |v: &[f64]| {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        let mut r = vec![0.0; v.len()];
        let mut k = 0;
        while k < idx.len() {
            let mut m = k;
            while m + 1 < idx.len() && v[idx[m + 1]] == v[idx[k]] {
                m += 1;
            }
            let avg = (k + m) as f64 / 2.0 + 1.0;
            for &i in &idx[k..=m] {
                r[i] = avg;
            }
            k = m + 1;
        }
        r
    };
    let (ra, rb) = (rank(a), rank(b));
    let n = a.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn table_strategy() -> impl Strategy<Value = Matrix> {
    (3usize..12, 3usize..10).prop_flat_map(|(g, e)| {
        prop::collection::vec(0.0f64..100.0, g * e)
            .prop_map(move |d| Matrix::from_vec(g, e, d).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn ecovalence_and_shukla_rank_identically(m in table_strategy()) {
        let t = from_matrix(&m);
        let w = wricke(&t).unwrap();
        let s: Vec<f64> = shukla(&t, 1.0, 10, 1).unwrap().iter().map(|s| s.sigma2).collect();
        prop_assert!((spearman(&w, &s) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ecovalence_partitions_interaction_and_sigma2_sums(m in table_strategy()) {
        let t = from_matrix(&m);
        let (g, e) = (m.rows() as f64, m.cols() as f64);
        let w = wricke(&t).unwrap();
        let wt: f64 = w.iter().sum();
        let gm: Vec<f64> = (0..m.rows()).map(|i| m.row(i).iter().sum::<f64>() / e).collect();
        let em: Vec<f64> = (0..m.cols()).map(|j| (0..m.rows()).map(|i| m[(i, j)]).sum::<f64>() / g).collect();
        let grand = gm.iter().sum::<f64>() / g;
        let total: f64 = m.as_slice().iter().map(|v| (v - grand).powi(2)).sum();
        let rows_ss: f64 = gm.iter().map(|v| e * (v - grand).powi(2)).sum();
        let cols_ss: f64 = em.iter().map(|v| g * (v - grand).powi(2)).sum();
        prop_assert!((wt - (total - rows_ss - cols_ss)).abs() <= 1e-9 * total.max(1.0));
        let st: f64 = shukla(&t, 1.0, 10, 1).unwrap().iter().map(|s| s.sigma2).sum();
        let want = wt * g / ((g - 2.0) * (e - 1.0)) - g * wt / ((g - 1.0) * (g - 2.0) * (e - 1.0));
        prop_assert!((st - want).abs() <= 1e-9 * wt.max(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn shift_and_scale_behave(seed in 0u64..10_000, shift in -100.0f64..100.0, c in 0.1f64..10.0) {
        let ds = simulated(seed, 2, 4, 2, 5);
        let map = |f: &dyn Fn(f64) -> f64| TrialDataset::from_records(
            ds.records().iter().cloned().map(|mut r| { r.trait_value = f(r.trait_value); r }).collect(),
            ColumnMapping::default(),
        ).unwrap();
        let opts = StabilityOptions::default();
        let base = stability_report(&ds, &opts).unwrap();
        let shifted = stability_report(&map(&|v| v + shift), &opts).unwrap();
        let scaled = stability_report(&map(&|v| v * c), &opts).unwrap();
        let close = |a: f64, b: f64, s: f64| (a - b).abs() <= 1e-7 * s.max(1.0);
        for ((a, b), s) in base.rows.iter().zip(&shifted.rows).zip(&scaled.rows) {
            let sc = c * c;
            prop_assert!(close(a.slope, b.slope, 1.0) && close(a.slope, s.slope, 1.0));
            prop_assert!(close(a.deviation_ms, b.deviation_ms, a.deviation_ms));
            prop_assert!(close(a.wricke_w2, b.wricke_w2, a.wricke_w2));
            prop_assert!(close(a.sigma2, b.sigma2, a.wricke_w2));
            prop_assert!(close(a.lin_binns_p, b.lin_binns_p, a.lin_binns_p));
            prop_assert!(close(a.mean_trait + shift, b.mean_trait, a.mean_trait));
            prop_assert_eq!(a.kang_rank, b.kang_rank);
            prop_assert!(close(a.wricke_w2 * sc, s.wricke_w2, a.wricke_w2 * sc));
            prop_assert!(close(a.sigma2 * sc, s.sigma2, a.wricke_w2 * sc));
            prop_assert!(close(a.deviation_ms * sc, s.deviation_ms, a.deviation_ms * sc));
            prop_assert!(close(a.lin_binns_p * sc, s.lin_binns_p, a.lin_binns_p * sc));
            prop_assert!(close(a.cv, s.cv, a.cv));
            prop_assert_eq!(a.kang_ys, s.kang_ys);
        }
    }
}
