use gxestat_core::numerics::{dist_cdf, ols, svd, DistKind, Distribution, Matrix};
use proptest::prelude::*;

/// Cyclic Jacobi eigenvalues of a symmetric matrix, used only as an oracle.
fn jacobi_eigenvalues(a: &Matrix) -> Vec<f64> {
    let n = a.rows();
    let mut m = a.to_rows();
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i][j] * m[i][j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if m[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k][p];
                    let mkq = m[k][q];
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p][k];
                    let mqk = m[q][k];
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| m[i][i]).collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev
}

fn matrix_strategy(max_dim: usize) -> impl Strategy<Value = Matrix> {
    (1..=max_dim, 1..=max_dim).prop_flat_map(|(r, c)| {
        prop::collection::vec(-100.0f64..100.0, r * c)
            .prop_map(move |data| Matrix::from_vec(r, c, data).unwrap())
    })
}

fn orthonormal_defect(m: &Matrix) -> f64 {
    m.gram().sub(&Matrix::identity(m.cols())).unwrap().max_abs()
}

#[test]
fn cdf_matches_high_precision_table() {
    let mut reader = csv::Reader::from_path(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/tests/data/dist_cdf_reference.csv"
    ))
    .unwrap();
    let mut worst = (0.0f64, String::new());
    let mut count = 0;
    for rec in reader.records() {
        let rec = rec.unwrap();
        let kind = match &rec[0] {
            "normal" => DistKind::Normal,
            "t" => DistKind::T,
            "f" => DistKind::F,
            "chisq" => DistKind::Chisq,
            other => panic!("unknown kind {other}"),
        };
        let x: f64 = rec[1].parse().unwrap();
        let df1: f64 = rec[2].parse().unwrap();
        let df2: f64 = rec[3].parse().unwrap();
        let expected: f64 = rec[4].parse().unwrap();
        let got = dist_cdf(kind, x, df1, df2).unwrap();
        let err = (got - expected).abs();
        if err > worst.0 {
            worst = (err, format!("{:?} x={x} df=({df1},{df2})", kind));
        }
        count += 1;
    }
    assert!(count > 500);
    assert!(worst.0 <= 1e-10, "max error {:e} at {}", worst.0, worst.1);
}

#[test]
fn survival_complements_cdf() {
    let ds = [
        Distribution::Normal,
        Distribution::student_t(7.0).unwrap(),
        Distribution::f(3.0, 20.0).unwrap(),
        Distribution::chi_squared(4.0).unwrap(),
    ];
    for d in ds {
        for x in [0.01, 0.5, 1.0, 3.0, 9.0] {
            assert!((d.cdf(x) + d.sf(x) - 1.0).abs() < 1e-13);
        }
    }
}

#[test]
fn small_noisy_fit_matches_normal_equations() {
    let xs: Vec<[f64; 3]> = (0..12)
        .map(|i| {
            let t = i as f64;
            [1.0, t, (t * 0.7).sin()]
        })
        .collect();
    let y: Vec<f64> = xs
        .iter()
        .enumerate()
        .map(|(i, r)| 0.5 + 1.5 * r[1] - 2.0 * r[2] + ((i * 37 % 11) as f64 - 5.0) * 0.1)
        .collect();
    let x = Matrix::from_fn(12, 3, |i, j| xs[i][j]);
    let fit = ols(&y, &x).unwrap();

    // Normal equations solved by Gaussian elimination.
    let g = x.gram();
    let xty = x.tr_mul_vec(&y);
    let mut aug: Vec<Vec<f64>> = (0..3)
        .map(|i| {
            let mut r = g.row(i).to_vec();
            r.push(xty[i]);
            r
        })
        .collect();
    for k in 0..3 {
        for i in (k + 1)..3 {
            let f = aug[i][k] / aug[k][k];
            for j in k..4 {
                aug[i][j] -= f * aug[k][j];
            }
        }
    }
    let mut beta = [0.0; 3];
    for i in (0..3).rev() {
        let s: f64 = ((i + 1)..3).map(|j| aug[i][j] * beta[j]).sum();
        beta[i] = (aug[i][3] - s) / aug[i][i];
    }
    for (got, want) in fit.coefficients.iter().zip(beta) {
        assert!((got.unwrap() - want).abs() < 1e-9);
    }
    let rss: f64 = fit.residuals.iter().map(|r| r * r).sum();
    assert!((rss - fit.residual_ss).abs() < 1e-12);
    assert_eq!(fit.df_residual, 12 - fit.design_rank);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn svd_reconstructs_and_is_orthonormal(a in matrix_strategy(30)) {
        let s = svd(&a).unwrap();
        let k = a.rows().min(a.cols());
        prop_assert_eq!(s.sigma.len(), k);
        let err = s.reconstruct(k).sub(&a).unwrap().frobenius_norm();
        prop_assert!(err <= 1e-10 * a.frobenius_norm().max(1.0));
        prop_assert!(orthonormal_defect(&s.u) <= 1e-10);
        prop_assert!(orthonormal_defect(&s.v) <= 1e-10);
        for w in s.sigma.windows(2) {
            prop_assert!(w[0] >= w[1]);
        }
        prop_assert!(s.sigma.iter().all(|&v| v >= 0.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn singular_values_match_eigen_oracle(a in matrix_strategy(8)) {
        let s = svd(&a).unwrap();
        let small = if a.rows() >= a.cols() { a.gram() } else { a.transpose().gram() };
        let ev = jacobi_eigenvalues(&small);
        let scale = ev[0].abs().max(1.0);
        for (sig, e) in s.sigma.iter().zip(&ev) {
            prop_assert!((sig * sig - e).abs() <= 1e-9 * scale);
        }
    }

    #[test]
    fn transpose_swaps_factors(a in matrix_strategy(10)) {
        let s = svd(&a).unwrap();
        let t = svd(&a.transpose()).unwrap();
        let scale = s.sigma[0].max(1.0);
        for (x, y) in s.sigma.iter().zip(&t.sigma) {
            prop_assert!((x - y).abs() <= 1e-10 * scale);
        }
        // Compare the outer products so the sign convention drops out.
        let k = s.sigma.len();
        for j in 0..k {
            if s.sigma[j] <= 1e-8 * scale
                || (j > 0 && (s.sigma[j - 1] - s.sigma[j]).abs() < 1e-6 * scale)
                || (j + 1 < k && (s.sigma[j] - s.sigma[j + 1]).abs() < 1e-6 * scale)
            {
                continue;
            }
            for r in 0..a.rows() {
                for c in 0..a.cols() {
                    let p1 = s.u[(r, j)] * s.v[(c, j)];
                    let p2 = t.v[(r, j)] * t.u[(c, j)];
                    prop_assert!((p1 - p2).abs() < 1e-7);
                }
            }
        }
    }

    #[test]
    fn scaling_scales_sigma(a in matrix_strategy(10), c in 0.0f64..50.0) {
        let s = svd(&a).unwrap();
        let t = svd(&a.scale(c)).unwrap();
        let scale = s.sigma[0].max(1.0) * c.max(1.0);
        for (x, y) in s.sigma.iter().zip(&t.sigma) {
            prop_assert!((c * x - y).abs() <= 1e-10 * scale);
        }
    }

    #[test]
    fn ols_residuals_are_orthogonal(
        (x, y) in (2usize..6).prop_flat_map(|p| (p..20).prop_flat_map(move |n| (
            prop::collection::vec(-10.0f64..10.0, n * p)
                .prop_map(move |d| Matrix::from_vec(n, p, d).unwrap()),
            prop::collection::vec(-50.0f64..50.0, n),
        )))
    ) {
        let fit = ols(&y, &x).unwrap();
        let ynorm = y.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
        for j in 0..x.cols() {
            let d: f64 = x.col(j).iter().zip(&fit.residuals).map(|(a, b)| a * b).sum();
            prop_assert!(d.abs() <= 1e-8 * ynorm);
        }
    }

    #[test]
    fn cdf_is_nondecreasing(d1 in 0.2f64..300.0, d2 in 0.2f64..300.0, a in -20.0f64..50.0, b in -20.0f64..50.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        for d in [
            Distribution::Normal,
            Distribution::student_t(d1).unwrap(),
            Distribution::f(d1, d2).unwrap(),
            Distribution::chi_squared(d2).unwrap(),
        ] {
            let (p, q) = (d.cdf(lo), d.cdf(hi));
            prop_assert!((0.0..=1.0).contains(&p) && (0.0..=1.0).contains(&q));
            prop_assert!(p <= q + 1e-15);
        }
    }
}
