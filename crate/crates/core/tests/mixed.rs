use gxestat_core::data::{ColumnMapping, TrialDataset, TrialRecord};
use gxestat_core::mixed::{
    balanced_anova, blup, build_model, fit_reml, predict, significance_table, test_fixed_terms,
    DegreesOfFreedom, FitOptions, ModelCase, ModelError, SignificanceOptions, Term, TermKind,
};
use gxestat_core::numerics::{Cholesky, Matrix};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Full factorial layout with trait values from `f(year, loc, rep, geno)`.
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

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Trial with a sizeable effect for every term of the full model.
fn simulated(seed: u64, y: usize, l: usize, r: usize, g: usize) -> TrialDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |n: usize, sd: f64| {
        (0..n)
            .map(|_| sd * gaussian(&mut rng))
            .collect::<Vec<f64>>()
    };
    let yr = draw(y, 2.0);
    let lc = draw(l, 6.0);
    let gen = draw(g, 4.0);
    let gl = draw(g * l, 2.0);
    let yl = draw(y * l, 2.0);
    let rep = draw(y * l * r, 2.5);
    let noise = draw(y * l * r * g, 3.0);
    layout(y, l, r, g, |yi, li, ri, gi| {
        50.0 + yr[yi]
            + lc[li]
            + gen[gi]
            + gl[gi * l + li]
            + yl[yi * l + li]
            + rep[(yi * l + li) * r + ri]
            + noise[((yi * l + li) * r + ri) * g + gi]
    })
}

fn case(id: u8) -> ModelCase {
    ModelCase::new(id).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-12)
}

#[test]
fn blups_match_dense_evaluation() {
    let ds = simulated(7, 2, 3, 2, 4);
    let c = case(1);
    let spec = build_model(&ds, c).unwrap();
    let fit = fit_reml(&spec, &FitOptions::default()).unwrap();
    let n = spec.n();

    // V = Σ σ²_t Z_t Z_tᵀ + σ² I, built densely.
    let mut v = Matrix::identity(n).scale(fit.residual_variance);
    for b in &spec.random {
        let s2 = fit.variance_components[&b.label].variance;
        for i in 0..n {
            for j in 0..n {
                if b.index[i] == b.index[j] {
                    v[(i, j)] += s2;
                }
            }
        }
    }
    let vinv = Cholesky::new(&v).unwrap().inverse();
    let ones = vec![1.0; n];
    let vinv_1 = vinv.mul_vec(&ones);
    let beta =
        vinv_1.iter().zip(&spec.y).map(|(a, y)| a * y).sum::<f64>() / vinv_1.iter().sum::<f64>();
    let resid: Vec<f64> = spec.y.iter().map(|y| y - beta).collect();
    let w = vinv.mul_vec(&resid);

    assert!((fit.fixed_effects["(Intercept)"].estimate - beta).abs() < 1e-6);
    for b in &spec.random {
        let s2 = fit.variance_components[&b.label].variance;
        let got = blup(&fit, &b.label).unwrap();
        for (lev, name) in b.levels.iter().enumerate() {
            let want: f64 = s2
                * (0..n)
                    .filter(|&i| b.index[i] == lev)
                    .map(|i| w[i])
                    .sum::<f64>();
            assert!(
                (got[name] - want).abs() < 1e-6 * (1.0 + want.abs()),
                "{} {name}: {} vs {want}",
                b.label,
                got[name]
            );
        }
    }
}

#[test]
fn zero_between_group_variance_is_recovered() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (l, r, g) = (4, 3, 5);
    let raw: Vec<f64> = (0..l * r * g).map(|_| 5.0 * gaussian(&mut rng)).collect();
    // Remove the genotype margin so the genotype effect is exactly absent.
    let mut gmean = vec![0.0; g];
    for (i, v) in raw.iter().enumerate() {
        gmean[i % g] += v / (l * r) as f64;
    }
    let lc: Vec<f64> = (0..l).map(|_| 8.0 * gaussian(&mut rng)).collect();
    let ds = layout(1, l, r, g, |_, li, ri, gi| {
        20.0 + lc[li] + raw[(li * r + ri) * g + gi] - gmean[gi]
    });
    let spec = build_model(&ds, case(3)).unwrap();
    let fit = fit_reml(&spec, &FitOptions::default()).unwrap();
    // case 3: CLT is fixed; use the all-random case for the genotype term.
    assert!(fit.variance_components.get("CLT").is_none());
    let fit = fit_reml(&build_model(&ds, case(1)).unwrap(), &FitOptions::default()).unwrap();
    let clt = fit.variance_components["CLT"];
    assert!(clt.variance < 1e-6, "CLT variance {}", clt.variance);
    assert!(blup(&fit, "CLT").unwrap().values().all(|v| v.abs() < 1e-3));
}

#[test]
fn zero_variance_model_predicts_grand_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (y, l, r, g) = (2, 3, 2, 3);
    let e: Vec<f64> = (0..y * l * r * g).map(|_| gaussian(&mut rng)).collect();
    let idx = |yi: usize, li: usize, ri: usize, gi: usize| ((yi * l + li) * r + ri) * g + gi;
    // Within-cell residual of the full factorial: every model term has zero SS.
    let mean = |sel: &dyn Fn(usize, usize, usize, usize) -> bool| {
        let mut s = 0.0;
        let mut n = 0.0;
        for a in 0..y {
            for b in 0..l {
                for c in 0..r {
                    for d in 0..g {
                        if sel(a, b, c, d) {
                            s += e[idx(a, b, c, d)];
                            n += 1.0;
                        }
                    }
                }
            }
        }
        s / n
    };
    let ds = layout(y, l, r, g, |yi, li, ri, gi| {
        let ylr = mean(&|a, b, c, _| a == yi && b == li && c == ri);
        let ylg = mean(&|a, b, _, d| a == yi && b == li && d == gi);
        let yl = mean(&|a, b, _, _| a == yi && b == li);
        30.0 + e[idx(yi, li, ri, gi)] - ylr - ylg + yl
    });
    let fit = fit_reml(&build_model(&ds, case(1)).unwrap(), &FitOptions::default()).unwrap();
    for (label, vc) in &fit.variance_components {
        assert!(vc.variance < 1e-8, "{label} {}", vc.variance);
    }
    let p = predict(&fit, &ds).unwrap();
    for f in &p.fitted {
        assert!((f - 30.0).abs() < 1e-6);
    }
}

#[test]
fn saturated_fixed_model_residuals_average_zero_per_cell() {
    let ds = simulated(21, 2, 3, 3, 4);
    let fit = fit_reml(&build_model(&ds, case(2)).unwrap(), &FitOptions::default()).unwrap();
    let p = predict(&fit, &ds).unwrap();
    let mut cells: std::collections::HashMap<(usize, usize, usize), (f64, usize)> =
        Default::default();
    for (c, r) in ds.codes().iter().zip(&p.residuals) {
        let e = cells.entry((c.year, c.location, c.genotype)).or_default();
        e.0 += r;
        e.1 += 1;
    }
    for ((s, n), key) in cells.values().map(|v| (v.0, v.1)).zip(cells.keys()) {
        assert!((s / n as f64).abs() < 1e-8, "cell {key:?}");
    }
}

#[test]
fn fixed_effects_equal_cell_mean_contrasts() {
    let ds = simulated(5, 2, 2, 3, 3);
    let fit = fit_reml(&build_model(&ds, case(2)).unwrap(), &FitOptions::default()).unwrap();
    let cell = |yr: &str, lc: &str, g: &str| {
        let v: Vec<f64> = ds
            .records()
            .iter()
            .filter(|r| r.year == yr && r.location == lc && r.genotype == g)
            .map(|r| r.trait_value)
            .collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let base = cell("2001", "L0", "G0");
    assert!((fit.fixed_effects["(Intercept)"].estimate - base).abs() < 1e-8);
    let g2 = fit.fixed_effects["CLTG2"].estimate;
    assert!((g2 - (cell("2001", "L0", "G2") - base)).abs() < 1e-8);
    let l1 = fit.fixed_effects["LCL1"].estimate;
    assert!((l1 - (cell("2001", "L1", "G0") - base)).abs() < 1e-8);
}

#[test]
fn full_model_likelihood_dominates_every_submodel() {
    let ds = simulated(13, 2, 3, 2, 4);
    let spec = build_model(&ds, case(1)).unwrap();
    let full = fit_reml(&spec, &FitOptions::default()).unwrap();
    for t in spec.random_terms() {
        let red = fit_reml(&spec.without_random(t).unwrap(), &FitOptions::default()).unwrap();
        assert!(
            full.log_likelihood >= red.log_likelihood - 1e-6,
            "{t}: {} < {}",
            full.log_likelihood,
            red.log_likelihood
        );
    }
}

/// Sums of squares by explicit loops over cells, for two-year data.
#[test]
fn balanced_anova_matches_direct_sums_of_squares() {
    let (y, l, r, g) = (2, 3, 2, 4);
    let ds = simulated(17, y, l, r, g);
    let a = balanced_anova(&ds, case(2)).unwrap();
    let mut x = vec![vec![vec![vec![0.0; g]; r]; l]; y];
    for (c, rec) in ds.codes().iter().zip(ds.records()) {
        x[c.year][c.location][c.rep][c.genotype] = rec.trait_value;
    }
    let n = (y * l * r * g) as f64;
    let grand: f64 = x.iter().flatten().flatten().flatten().sum::<f64>() / n;
    let gm: Vec<f64> = (0..g)
        .map(|k| {
            (0..y)
                .flat_map(|a| (0..l).flat_map(move |b| (0..r).map(move |c| (a, b, c))))
                .map(|(a, b, c)| x[a][b][c][k])
                .sum::<f64>()
                / (y * l * r) as f64
        })
        .collect();
    let ss_clt: f64 = gm
        .iter()
        .map(|m| (y * l * r) as f64 * (m - grand).powi(2))
        .sum();
    assert!(rel(a.row(Term::Clt).unwrap().sum_sq, ss_clt) < 1e-10);

    let lm: Vec<f64> = (0..l)
        .map(|b| {
            (0..y)
                .flat_map(|a| (0..r).flat_map(move |c| (0..g).map(move |d| (a, c, d))))
                .map(|(a, c, d)| x[a][b][c][d])
                .sum::<f64>()
                / (y * r * g) as f64
        })
        .collect();
    let glm: Vec<Vec<f64>> = (0..g)
        .map(|d| {
            (0..l)
                .map(|b| {
                    (0..y)
                        .flat_map(|a| (0..r).map(move |c| (a, c)))
                        .map(|(a, c)| x[a][b][c][d])
                        .sum::<f64>()
                        / (y * r) as f64
                })
                .collect()
        })
        .collect();
    let ss_gl: f64 = (0..g)
        .flat_map(|d| (0..l).map(move |b| (d, b)))
        .map(|(d, b)| (y * r) as f64 * (glm[d][b] - gm[d] - lm[b] + grand).powi(2))
        .sum();
    assert!(rel(a.row(Term::CltLc).unwrap().sum_sq, ss_gl) < 1e-10);

    // Reps within year × location.
    let mut ss_rep = 0.0;
    for ya in 0..y {
        for b in 0..l {
            let yl: f64 = (0..r)
                .flat_map(|c| (0..g).map(move |d| (c, d)))
                .map(|(c, d)| x[ya][b][c][d])
                .sum::<f64>()
                / (r * g) as f64;
            for c in 0..r {
                let ylr: f64 = x[ya][b][c].iter().sum::<f64>() / g as f64;
                ss_rep += g as f64 * (ylr - yl).powi(2);
            }
        }
    }
    assert!(rel(a.row(Term::Rep).unwrap().sum_sq, ss_rep) < 1e-10);

    let ss_sum: f64 = a.rows.iter().map(|r| r.sum_sq).sum();
    assert!(rel(ss_sum, a.total_sum_sq) < 1e-10);

    // In case 2 only reps are random: CLT is tested against the residual,
    // LC against the rep mean square.
    let clt = a.row(Term::Clt).unwrap();
    let err = clt.error.as_ref().unwrap();
    assert!(err.exact);
    assert_eq!(err.mean_square, a.residual().mean_square);
    let lc = a.row(Term::Lc).unwrap();
    assert_eq!(
        lc.error.as_ref().unwrap().mean_square,
        a.row(Term::Rep).unwrap().mean_square
    );
}

#[test]
fn constant_cells_give_zero_f() {
    let ds = layout(1, 3, 3, 4, |_, _, ri, _| 10.0 + ri as f64);
    let rows = test_fixed_terms(&ds, case(2)).unwrap();
    for r in rows.iter().filter(|r| r.term.is_some()) {
        assert_eq!(r.f_value, Some(0.0), "{}", r.label);
        assert_eq!(r.p_value, Some(1.0), "{}", r.label);
    }
}

#[test]
fn unbalanced_data_refuses_f_tests() {
    let ds = simulated(1, 1, 3, 2, 4);
    let mut recs = ds.records().to_vec();
    recs.pop();
    let ds = TrialDataset::from_records(recs, ColumnMapping::default()).unwrap();
    assert_eq!(
        test_fixed_terms(&ds, case(2)).unwrap_err(),
        ModelError::UnbalancedData
    );
}

#[test]
fn unknown_blup_term_is_an_error() {
    let ds = simulated(2, 1, 3, 2, 4);
    let fit = fit_reml(&build_model(&ds, case(2)).unwrap(), &FitOptions::default()).unwrap();
    assert!(matches!(blup(&fit, "CLT"), Err(ModelError::UnknownTerm(_))));
    assert!(blup(&fit, "LC * RP").is_ok());
}

#[test]
fn single_year_data_drops_year_terms_with_warning() {
    let ds = simulated(4, 1, 3, 2, 4);
    let spec = build_model(&ds, case(1)).unwrap();
    assert!(spec
        .random_terms()
        .iter()
        .all(|t| *t == Term::Rep || !t.involves_year()));
    assert!(!spec.warnings.is_empty());
    assert_eq!(
        spec.random
            .iter()
            .find(|b| b.term == Term::Rep)
            .unwrap()
            .label,
        "LC * RP"
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn degrees_of_freedom_follow_the_factorial_formulas(g in 2usize..40, l in 2usize..15, y in 2usize..6, r in 2usize..8) {
        let d = DegreesOfFreedom::new(g, l, y, r);
        prop_assert_eq!(d.of(Term::Clt), g - 1);
        prop_assert_eq!(d.of(Term::Lc), l - 1);
        prop_assert_eq!(d.of(Term::Yr), y - 1);
        prop_assert_eq!(d.of(Term::Rep), (r - 1) * l * y);
        prop_assert_eq!(d.of(Term::CltYr), (g - 1) * (y - 1));
        prop_assert_eq!(d.of(Term::CltLc), (g - 1) * (l - 1));
        prop_assert_eq!(d.of(Term::LcYr), (l - 1) * (y - 1));
        prop_assert_eq!(d.of(Term::CltYrLc), (g - 1) * (l - 1) * (y - 1));
        let model: usize = Term::ALL.iter().map(|&t| d.of(t)).sum();
        prop_assert_eq!(model + d.residual, g * l * y * r - 1);
    }
}

fn random_rows(ds: &TrialDataset, c: u8) -> Vec<(String, f64, f64, f64)> {
    significance_table(ds, case(c), &SignificanceOptions::default())
        .unwrap()
        .rows
        .into_iter()
        .filter(|r| r.kind != TermKind::Fixed)
        .map(|r| {
            (
                r.term,
                r.variance.unwrap(),
                r.statistic.unwrap_or(0.0),
                r.p_value.unwrap_or(0.0),
            )
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn shift_leaves_components_and_tests_unchanged(seed in 0u64..1000, shift in -500.0f64..500.0) {
        let ds = simulated(seed, 2, 3, 2, 3);
        let shifted = TrialDataset::from_records(
            ds.records().iter().cloned().map(|mut r| { r.trait_value += shift; r }).collect(),
            ColumnMapping::default(),
        ).unwrap();
        let a = random_rows(&ds, 1);
        let b = random_rows(&shifted, 1);
        for (x, y) in a.iter().zip(&b) {
            let scale = a.iter().map(|r| r.1).fold(0.0, f64::max);
            prop_assert!((x.1 - y.1).abs() <= 1e-5 * scale, "{}: {} vs {}", x.0, x.1, y.1);
            prop_assert!((x.2 - y.2).abs() <= 1e-4, "{}: stat {} vs {}", x.0, x.2, y.2);
        }
        let fa = test_fixed_terms(&ds, case(2)).unwrap();
        let fb = test_fixed_terms(&shifted, case(2)).unwrap();
        for (x, y) in fa.iter().zip(&fb) {
            if let (Some(p), Some(q)) = (x.f_value, y.f_value) {
                prop_assert!(rel(q, p) < 1e-8);
            }
        }
    }

    #[test]
    fn scaling_scales_components_and_keeps_p_values(seed in 0u64..1000, c in 0.05f64..20.0) {
        let ds = simulated(seed, 2, 3, 2, 3);
        let scaled = TrialDataset::from_records(
            ds.records().iter().cloned().map(|mut r| { r.trait_value *= c; r }).collect(),
            ColumnMapping::default(),
        ).unwrap();
        let a = random_rows(&ds, 1);
        let b = random_rows(&scaled, 1);
        let scale = a.iter().map(|r| r.1).fold(0.0, f64::max);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x.1 * c * c - y.1).abs() <= 1e-5 * scale * c * c, "{}: {} vs {}", x.0, x.1 * c * c, y.1);
            prop_assert!((x.3 - y.3).abs() <= 1e-4, "{}: p {} vs {}", x.0, x.3, y.3);
        }
        let fa = test_fixed_terms(&ds, case(2)).unwrap();
        let fb = test_fixed_terms(&scaled, case(2)).unwrap();
        for (x, y) in fa.iter().zip(&fb) {
            if let (Some(p), Some(q)) = (x.p_value, y.p_value) {
                prop_assert!((p - q).abs() < 1e-9);
            }
        }
    }
}
