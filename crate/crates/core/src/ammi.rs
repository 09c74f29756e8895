//! Additive main effects and multiplicative interaction (AMMI): row and
//! column effects from the two-way means, SVD of the double-centred
//! interaction, and a parametric-bootstrap choice of how many
//! multiplicative terms to keep.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::biplot::{
    AxisInfo, BiplotGeometry, BiplotMode, BiplotModel, BiplotPoint, InteractionSign, Overlay,
    PointKind,
};
use crate::data::{DataError, TwoWayTable};
use crate::numerics::{svd, Distribution, Matrix, NumericsError};
use crate::text::aligned;

/// Singular values at or below this fraction of ‖Y‖ are treated as zero.
const ZERO_SV: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AmmiError {
    #[error(transparent)]
    IncompleteTable(#[from] DataError),
    #[error(
        "AMMI needs at least 3 genotypes and 3 environments, found {genotypes} × {environments}"
    )]
    TooSmall {
        genotypes: usize,
        environments: usize,
    },
    #[error("{requested} components requested but at most {max} are available")]
    TooManyComponents { requested: usize, max: usize },
    #[error("axis {axis} out of range; the fit has {available} components")]
    AxisOutOfRange { axis: usize, available: usize },
    #[error("biplot needs 2 or 3 axes, got {0}")]
    AxisCount(usize),
    #[error("alpha must lie strictly between 0 and 1, got {0}")]
    InvalidAlpha(f64),
    #[error("n_boot must be positive")]
    InvalidBootstrapSize,
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Pooled error of the trial on the single-observation scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PooledError {
    pub mean_square: f64,
    pub df: usize,
    /// Observations behind each cell mean; sums of squares are scaled by it.
    pub reps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum ComponentChoice {
    Fixed {
        n: usize,
    },
    Bootstrap {
        alpha: f64,
        n_boot: usize,
        seed: u64,
    },
}

impl ComponentChoice {
    pub fn bootstrap(seed: u64) -> Self {
        ComponentChoice::Bootstrap {
            alpha: 0.05,
            n_boot: 1000,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMethod {
    Bootstrap,
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IpcSelection {
    /// Numbers of terms tested under the null, in order.
    pub tested_k: Vec<usize>,
    pub p_values: Vec<f64>,
    pub retained: usize,
    pub method: SelectionMethod,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_boot: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmmiAnovaRow {
    pub source: String,
    pub df: f64,
    pub sum_sq: f64,
    pub mean_square: f64,
    pub f_value: Option<f64>,
    pub p_value: Option<f64>,
    /// Share of the interaction SS, for IPC rows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub percent: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmmiFit {
    pub genotypes: Vec<String>,
    pub environments: Vec<String>,
    pub grand_mean: f64,
    pub genotype_effects: Vec<f64>,
    pub environment_effects: Vec<f64>,
    /// All `min(G−1, E−1)` singular values of the interaction, nonincreasing.
    pub singular_values: Vec<f64>,
    /// `G × min(G−1, E−1)`; columns for zero singular values are zero.
    pub genotype_scores: Vec<Vec<f64>>,
    pub environment_scores: Vec<Vec<f64>>,
    pub n_components: usize,
    /// Cell means minus the model with `n_components` terms.
    pub residual: Vec<Vec<f64>>,
    pub interaction_ss: f64,
    pub anova: Vec<AmmiAnovaRow>,
    pub selection: IpcSelection,
}

impl AmmiFit {
    pub fn n_genotypes(&self) -> usize {
        self.genotypes.len()
    }

    pub fn n_environments(&self) -> usize {
        self.environments.len()
    }

    pub fn max_components(&self) -> usize {
        self.singular_values.len()
    }

    /// `μ + αᵢ + β_e + Σₙ λₙ γᵢₙ δₑₙ` over the first `n` terms.
    pub fn fitted(&self, n: usize) -> Vec<Vec<f64>> {
        let n = n.min(self.max_components());
        (0..self.n_genotypes())
            .map(|i| {
                (0..self.n_environments())
                    .map(|e| {
                        self.grand_mean
                            + self.genotype_effects[i]
                            + self.environment_effects[e]
                            + (0..n)
                                .map(|k| {
                                    self.singular_values[k]
                                        * self.genotype_scores[i][k]
                                        * self.environment_scores[e][k]
                                })
                                .sum::<f64>()
                    })
                    .collect()
            })
            .collect()
    }

    /// Explained share of the interaction SS per component, in percent.
    pub fn explained_percent(&self) -> Vec<f64> {
        self.singular_values
            .iter()
            .map(|l| {
                if self.interaction_ss > 0.0 {
                    100.0 * l * l / self.interaction_ss
                } else {
                    0.0
                }
            })
            .collect()
    }

    pub fn anova_row(&self, source: &str) -> Option<&AmmiAnovaRow> {
        self.anova.iter().find(|r| r.source == source)
    }

    /// ANOVA as aligned text.
    pub fn anova_text(&self) -> String {
        let opt = |v: Option<f64>, d: usize| v.map_or_else(String::new, |x| format!("{x:.d$}"));
        let body: Vec<Vec<String>> = self
            .anova
            .iter()
            .map(|r| {
                vec![
                    r.source.clone(),
                    format!("{}", r.df),
                    format!("{:.3}", r.sum_sq),
                    format!("{:.3}", r.mean_square),
                    opt(r.f_value, 3),
                    opt(r.p_value, 4),
                    opt(r.percent, 1),
                ]
            })
            .collect();
        aligned(
            &["Source", "Df", "Sum Sq", "Mean Sq", "F", "Pr(>F)", "%"],
            &body,
        )
    }

    pub fn anova_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.anova {
            w.serialize(r).expect("write to Vec");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }

    /// Genotype and environment IPC scores, one row per entry.
    pub fn scores_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut head = vec![
            "kind".to_string(),
            "label".to_string(),
            "effect".to_string(),
        ];
        head.extend((1..=self.max_components()).map(|k| format!("IPC{k}")));
        w.write_record(&head).expect("write to Vec");
        let rows = self
            .genotypes
            .iter()
            .zip(&self.genotype_effects)
            .zip(&self.genotype_scores)
            .map(|((l, e), s)| ("genotype", l, e, s))
            .chain(
                self.environments
                    .iter()
                    .zip(&self.environment_effects)
                    .zip(&self.environment_scores)
                    .map(|((l, e), s)| ("environment", l, e, s)),
            );
        for (kind, label, effect, scores) in rows {
            let mut rec = vec![kind.to_string(), label.clone(), effect.to_string()];
            rec.extend(scores.iter().map(f64::to_string));
            w.write_record(&rec).expect("write to Vec");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }
}

struct Decomposition {
    matrix: Matrix,
    grand: f64,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    interaction: Matrix,
    sigma: Vec<f64>,
    u: Matrix,
    v: Matrix,
}

fn check_size(g: usize, e: usize) -> Result<(), AmmiError> {
    if g < 3 || e < 3 {
        return Err(AmmiError::TooSmall {
            genotypes: g,
            environments: e,
        });
    }
    Ok(())
}

fn double_centre(m: &Matrix) -> (f64, Vec<f64>, Vec<f64>, Matrix) {
    let (g, e) = (m.rows(), m.cols());
    let rows: Vec<f64> = (0..g)
        .map(|i| m.row(i).iter().sum::<f64>() / e as f64)
        .collect();
    let cols: Vec<f64> = (0..e)
        .map(|j| (0..g).map(|i| m[(i, j)]).sum::<f64>() / g as f64)
        .collect();
    let grand = rows.iter().sum::<f64>() / g as f64;
    let z = Matrix::from_fn(g, e, |i, j| m[(i, j)] - rows[i] - cols[j] + grand);
    let alpha = rows.iter().map(|r| r - grand).collect();
    let beta = cols.iter().map(|c| c - grand).collect();
    (grand, alpha, beta, z)
}

/// Interaction singular values and vectors with the numerically zero
/// ones cleared.
fn decompose(table: &TwoWayTable) -> Result<Decomposition, AmmiError> {
    let matrix = table.complete_matrix()?;
    let (g, e) = (matrix.rows(), matrix.cols());
    check_size(g, e)?;
    let (grand, alpha, beta, interaction) = double_centre(&matrix);
    let (mut sigma, mut u, mut v) = interaction_svd(&interaction)?;
    let floor = ZERO_SV * matrix.frobenius_norm();
    for k in 0..sigma.len() {
        if sigma[k] <= floor {
            sigma[k] = 0.0;
            for i in 0..g {
                u[(i, k)] = 0.0;
            }
            for j in 0..e {
                v[(j, k)] = 0.0;
            }
        }
    }
    Ok(Decomposition {
        matrix,
        grand,
        alpha,
        beta,
        interaction,
        sigma,
        u,
        v,
    })
}

/// SVD truncated to `min(G−1, E−1)` triplets, the rank bound of a
/// double-centred matrix.
fn interaction_svd(z: &Matrix) -> Result<(Vec<f64>, Matrix, Matrix), AmmiError> {
    let k = (z.rows() - 1).min(z.cols() - 1);
    let s = svd(z)?;
    let u = Matrix::from_fn(z.rows(), k, |i, t| s.u[(i, t)]);
    let v = Matrix::from_fn(z.cols(), k, |j, t| s.v[(j, t)]);
    Ok((s.sigma[..k].to_vec(), u, v))
}

/// Fits AMMI with the number of terms fixed or chosen by the bootstrap
/// test. With a pooled error the ANOVA is on the plot scale and every
/// source is tested against it; otherwise main effects are tested against
/// the interaction and IPCs against the AMMI residual.
pub fn fit_ammi(
    table: &TwoWayTable,
    choice: &ComponentChoice,
    error: Option<&PooledError>,
) -> Result<AmmiFit, AmmiError> {
    let d = decompose(table)?;
    let (g, e) = (d.matrix.rows(), d.matrix.cols());
    let kmax = d.sigma.len();
    let selection = match *choice {
        ComponentChoice::Fixed { n } => {
            if n > kmax {
                return Err(AmmiError::TooManyComponents {
                    requested: n,
                    max: kmax,
                });
            }
            IpcSelection {
                tested_k: Vec::new(),
                p_values: Vec::new(),
                retained: n,
                method: SelectionMethod::Fixed,
                alpha: None,
                n_boot: None,
                seed: None,
            }
        }
        ComponentChoice::Bootstrap {
            alpha,
            n_boot,
            seed,
        } => bootstrap_selection(&d, alpha, n_boot, seed)?,
    };
    let n = selection.retained;

    let reconstructed = Matrix::from_fn(g, e, |i, j| {
        d.grand
            + d.alpha[i]
            + d.beta[j]
            + (0..n)
                .map(|k| d.sigma[k] * d.u[(i, k)] * d.v[(j, k)])
                .sum::<f64>()
    });
    let residual = d.matrix.sub(&reconstructed)?.to_rows();
    let interaction_ss: f64 = d.interaction.as_slice().iter().map(|v| v * v).sum();
    let anova = anova_table(&d, n, interaction_ss, error);

    Ok(AmmiFit {
        genotypes: table.genotypes.clone(),
        environments: table.environment_labels(),
        grand_mean: d.grand,
        genotype_effects: d.alpha,
        environment_effects: d.beta,
        singular_values: d.sigma,
        genotype_scores: d.u.to_rows(),
        environment_scores: d.v.to_rows(),
        n_components: n,
        residual,
        interaction_ss,
        anova,
        selection,
    })
}

fn f_test(ms: f64, df: f64, err_ms: f64, err_df: f64) -> (Option<f64>, Option<f64>) {
    if !(err_ms > 0.0 && err_df > 0.0 && df > 0.0) {
        return (None, None);
    }
    let f = ms / err_ms;
    let p = Distribution::f(df, err_df).ok().map(|d| d.sf(f));
    (Some(f), p)
}

fn anova_table(
    d: &Decomposition,
    n: usize,
    interaction_ss: f64,
    error: Option<&PooledError>,
) -> Vec<AmmiAnovaRow> {
    let (g, e) = (d.matrix.rows() as f64, d.matrix.cols() as f64);
    let scale = error.map_or(1.0, |p| p.reps.max(1) as f64);
    let row = |source: &str, df: f64, ss: f64| AmmiAnovaRow {
        source: source.to_string(),
        df,
        sum_sq: ss,
        mean_square: if df > 0.0 { ss / df } else { 0.0 },
        f_value: None,
        p_value: None,
        percent: None,
    };
    let gen_ss = scale * e * d.alpha.iter().map(|a| a * a).sum::<f64>();
    let env_ss = scale * g * d.beta.iter().map(|b| b * b).sum::<f64>();
    let int_df = (g - 1.0) * (e - 1.0);
    let int_ss = scale * interaction_ss;

    let mut rows = vec![
        row("Genotypes", g - 1.0, gen_ss),
        row("Environments", e - 1.0, env_ss),
        row("Interactions", int_df, int_ss),
    ];
    let mut ipc_df_total = 0.0;
    let mut ipc_ss_total = 0.0;
    for k in 0..n {
        let df = g + e - 1.0 - 2.0 * (k + 1) as f64;
        let ss = scale * d.sigma[k] * d.sigma[k];
        ipc_df_total += df;
        ipc_ss_total += ss;
        let mut r = row(&format!("IPC{}", k + 1), df, ss);
        r.percent =
            (interaction_ss > 0.0).then(|| 100.0 * d.sigma[k] * d.sigma[k] / interaction_ss);
        rows.push(r);
    }
    let res_df = (int_df - ipc_df_total).max(0.0);
    let res_ss = (int_ss - ipc_ss_total).max(0.0);
    let residual = row("Residuals", res_df, res_ss);
    let res_ms = residual.mean_square;

    match error {
        Some(p) => {
            let (ems, edf) = (p.mean_square, p.df as f64);
            for r in rows.iter_mut() {
                (r.f_value, r.p_value) = f_test(r.mean_square, r.df, ems, edf);
            }
            let mut residual = residual;
            (residual.f_value, residual.p_value) =
                f_test(residual.mean_square, residual.df, ems, edf);
            rows.push(residual);
            rows.push(row("Pooled error", edf, ems * edf));
        }
        None => {
            let int_ms = rows[2].mean_square;
            for r in rows.iter_mut().take(2) {
                (r.f_value, r.p_value) = f_test(r.mean_square, r.df, int_ms, int_df);
            }
            for r in rows.iter_mut().skip(3) {
                (r.f_value, r.p_value) = f_test(r.mean_square, r.df, res_ms, res_df);
            }
            rows.push(residual);
        }
    }
    rows
}

/// Sequential parametric-bootstrap test for the number of multiplicative
/// terms. The statistic for `k` terms is `λ²ₖ₊₁ / Σₘ₍>ₖ₎ λ²ₘ`; under the
/// null the table is the fitted `k`-term interaction plus Gaussian noise
/// whose variance comes from the remaining singular values.
pub fn select_components(
    table: &TwoWayTable,
    alpha: f64,
    n_boot: usize,
    seed: u64,
) -> Result<IpcSelection, AmmiError> {
    let d = decompose(table)?;
    bootstrap_selection(&d, alpha, n_boot, seed)
}

fn ratio(sigma: &[f64], k: usize) -> Option<f64> {
    let tail: f64 = sigma[k..].iter().map(|s| s * s).sum();
    (tail > 0.0).then(|| sigma[k] * sigma[k] / tail)
}

/// Independent stream per (test, resample) so results never depend on
/// evaluation order.
fn resample_seed(seed: u64, k: usize, b: usize) -> u64 {
    let mut x = seed;
    for v in [k as u64, b as u64] {
        x = splitmix64(x ^ splitmix64(v.wrapping_add(0x632B_E59B_D9B4_E019)));
    }
    x
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn bootstrap_selection(
    d: &Decomposition,
    alpha: f64,
    n_boot: usize,
    seed: u64,
) -> Result<IpcSelection, AmmiError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(AmmiError::InvalidAlpha(alpha));
    }
    if n_boot == 0 {
        return Err(AmmiError::InvalidBootstrapSize);
    }
    let (g, e) = (d.interaction.rows(), d.interaction.cols());
    let kmax = d.sigma.len();
    let mut tested_k = Vec::new();
    let mut p_values = Vec::new();
    let mut retained = kmax.saturating_sub(1);

    for k in 0..kmax.saturating_sub(1) {
        let Some(observed) = ratio(&d.sigma, k) else {
            // nothing left to explain
            retained = k;
            break;
        };
        let tail: f64 = d.sigma[k..].iter().map(|s| s * s).sum();
        let noise_sd = (tail / ((g - 1 - k) * (e - 1 - k)) as f64).sqrt();
        let fitted = Matrix::from_fn(g, e, |i, j| {
            (0..k).map(|t| d.sigma[t] * d.u[(i, t)] * d.v[(j, t)]).sum()
        });
        let mut exceed = 0usize;
        for b in 0..n_boot {
            let mut rng = ChaCha8Rng::seed_from_u64(resample_seed(seed, k, b));
            let sim = Matrix::from_fn(g, e, |i, j| {
                let z: f64 = StandardNormal.sample(&mut rng);
                fitted[(i, j)] + noise_sd * z
            });
            let (_, _, _, centred) = double_centre(&sim);
            let (sigma, _, _) = interaction_svd(&centred)?;
            if ratio(&sigma, k).is_some_and(|t| t >= observed) {
                exceed += 1;
            }
        }
        let p = (1 + exceed) as f64 / (1 + n_boot) as f64;
        tested_k.push(k);
        p_values.push(p);
        if p >= alpha {
            retained = k;
            break;
        }
    }
    Ok(IpcSelection {
        tested_k,
        p_values,
        retained,
        method: SelectionMethod::Bootstrap,
        alpha: Some(alpha),
        n_boot: Some(n_boot),
        seed: Some(seed),
    })
}

/// Symmetric-scaled scores (`γ·λ^½`, `δ·λ^½`) on two or three components,
/// with the per-pair interaction sign implied by the plotted axes.
pub fn ammi_biplot_data(fit: &AmmiFit, axes: &[usize]) -> Result<BiplotGeometry, AmmiError> {
    if !(2..=3).contains(&axes.len()) {
        return Err(AmmiError::AxisCount(axes.len()));
    }
    // every component is stored, so biplots stay available when fewer
    // than two terms are retained
    let available = fit.max_components();
    for &a in axes {
        if a >= available {
            return Err(AmmiError::AxisOutOfRange { axis: a, available });
        }
    }
    let root: Vec<f64> = axes
        .iter()
        .map(|&a| fit.singular_values[a].sqrt())
        .collect();
    let coords = |scores: &[f64]| -> Vec<f64> {
        axes.iter()
            .zip(&root)
            .map(|(&a, r)| scores[a] * r)
            .collect()
    };
    let point = |label: &str, kind, c: Vec<f64>| BiplotPoint {
        label: label.to_string(),
        kind,
        x: c[0],
        y: c[1],
        z: c.get(2).copied(),
    };
    let g_coords: Vec<Vec<f64>> = fit.genotype_scores.iter().map(|s| coords(s)).collect();
    let e_coords: Vec<Vec<f64>> = fit.environment_scores.iter().map(|s| coords(s)).collect();

    let mut points = Vec::with_capacity(fit.n_genotypes() + fit.n_environments());
    for (label, c) in fit.genotypes.iter().zip(&g_coords) {
        points.push(point(label, PointKind::Genotype, c.clone()));
    }
    for (label, c) in fit.environments.iter().zip(&e_coords) {
        points.push(point(label, PointKind::Environment, c.clone()));
    }
    let mut pairs = Vec::with_capacity(fit.n_genotypes() * fit.n_environments());
    for (gl, gc) in fit.genotypes.iter().zip(&g_coords) {
        for (el, ec) in fit.environments.iter().zip(&e_coords) {
            let product: f64 = gc.iter().zip(ec).map(|(a, b)| a * b).sum();
            pairs.push(InteractionSign {
                genotype: gl.clone(),
                environment: el.clone(),
                product,
                positive: product > 0.0,
            });
        }
    }
    let pct = fit.explained_percent();
    let mut warnings = Vec::new();
    if fit.interaction_ss == 0.0 {
        warnings.push("no interaction: every point sits at the origin".to_string());
    }
    Ok(BiplotGeometry {
        model: BiplotModel::Ammi,
        mode: BiplotMode::PcScatter,
        svp: 0.5,
        axes: axes
            .iter()
            .map(|&a| AxisInfo {
                component: a,
                explained_percent: pct[a],
            })
            .collect(),
        points,
        mean_axis: None,
        overlay: Overlay::Interaction { pairs },
        warnings,
    })
}
