//! Profiled REML / ML fitting through the mixed-model equations.
//!
//! Parametrisation: `y = Xβ + ZΛu + ε`, `u ~ N(0, σ²I)`, `ε ~ N(0, σ²I)` with
//! `Λ` diagonal holding one relative standard deviation `θ_t` per random term.
//! For fixed `θ` the penalised system
//!
//! ```text
//! C = [ΛZᵀZΛ + I   ΛZᵀX]      C [u; β] = [ΛZᵀy; Xᵀy]
//!     [XᵀZΛ        XᵀX ]
//! ```
//!
//! gives the conditional modes and GLS estimates; `log|C|` and the penalised
//! residual sum of squares give the profiled deviance. The deviance is even in
//! each `θ_t`, so BFGS runs unconstrained on `θ` and a zero component is an
//! ordinary stationary point.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::data::TrialDataset;
use crate::numerics::{Cholesky, Matrix};

use super::design::{build_model, ModelSpec};
use super::optim::{bfgs, BfgsSettings};
use super::{ModelCase, ModelError, Term};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMethod {
    #[default]
    Reml,
    Ml,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub method: FitMethod,
    pub max_iter: usize,
    /// Multipliers applied to moment-based starting ratios; one optimisation
    /// per multiplier, best deviance kept.
    pub start_multipliers: Vec<f64>,
    /// Explicit starting `θ` (one per random block); overrides the multipliers.
    pub start_theta: Option<Vec<f64>>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            method: FitMethod::Reml,
            max_iter: 500,
            start_multipliers: vec![0.01, 1.0, 10.0],
            start_theta: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceComponent {
    pub variance: f64,
    pub std_dev: f64,
    /// Estimate sits on the zero boundary.
    pub boundary: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedEffect {
    pub estimate: f64,
    pub standard_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedModelFit {
    pub case: ModelCase,
    pub method: FitMethod,
    pub n_obs: usize,
    pub random_terms: Vec<Term>,
    /// Keyed by term label, in random-block order.
    pub variance_components: IndexMap<String, VarianceComponent>,
    pub residual_variance: f64,
    pub residual_std_dev: f64,
    pub fixed_effects: IndexMap<String, FixedEffect>,
    /// REML or ML log-likelihood, depending on `method`.
    pub log_likelihood: f64,
    pub deviance: f64,
    pub blups: IndexMap<String, IndexMap<String, f64>>,
    pub converged: bool,
    pub iterations: usize,
    /// Relative standard deviations `θ_t = σ_t / σ`.
    pub theta: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Cross-products that do not depend on `θ`.
struct Problem<'a> {
    spec: &'a ModelSpec,
    method: FitMethod,
    n: usize,
    p: usize,
    q: usize,
    offsets: Vec<usize>,
    /// Global column of each record in each block.
    cols: Vec<Vec<usize>>,
    yc: Vec<f64>,
    y_mean: f64,
    ztz: Matrix,
    xtz: Matrix,
    xtx: Matrix,
    zty: Vec<f64>,
    xty: Vec<f64>,
}

struct Eval {
    deviance: f64,
    grad: Vec<f64>,
    chol: Cholesky,
    u: Vec<f64>,
    beta: Vec<f64>,
    pwrss: f64,
}

impl<'a> Problem<'a> {
    fn new(spec: &'a ModelSpec, method: FitMethod) -> Self {
        let n = spec.n();
        let p = spec.x.cols();
        let mut offsets = Vec::with_capacity(spec.random.len() + 1);
        let mut q = 0;
        for b in &spec.random {
            offsets.push(q);
            q += b.levels.len();
        }
        offsets.push(q);
        let cols: Vec<Vec<usize>> = spec
            .random
            .iter()
            .zip(&offsets)
            .map(|(b, &o)| b.index.iter().map(|&l| o + l).collect())
            .collect();
        let y_mean = spec.y.iter().sum::<f64>() / n as f64;
        let yc: Vec<f64> = spec.y.iter().map(|v| v - y_mean).collect();

        let mut ztz = Matrix::zeros(q, q);
        let mut xtz = Matrix::zeros(p, q);
        let mut zty = vec![0.0; q];
        for i in 0..n {
            let xi = spec.x.row(i);
            for bc in &cols {
                let a = bc[i];
                zty[a] += yc[i];
                for bc2 in &cols {
                    ztz[(a, bc2[i])] += 1.0;
                }
                for (r, &xv) in xi.iter().enumerate() {
                    xtz[(r, a)] += xv;
                }
            }
        }
        let xtx = spec.x.gram();
        let xty = spec.x.tr_mul_vec(&yc);
        Self {
            spec,
            method,
            n,
            p,
            q,
            offsets,
            cols,
            yc,
            y_mean,
            ztz,
            xtz,
            xtx,
            zty,
            xty,
        }
    }

    fn k(&self) -> usize {
        self.spec.random.len()
    }

    fn lambda(&self, theta: &[f64]) -> Vec<f64> {
        let mut lam = vec![0.0; self.q];
        for (t, w) in self.offsets.windows(2).enumerate() {
            lam[w[0]..w[1]].iter_mut().for_each(|v| *v = theta[t]);
        }
        lam
    }

    fn df_resid(&self) -> f64 {
        match self.method {
            FitMethod::Reml => (self.n - self.p) as f64,
            FitMethod::Ml => self.n as f64,
        }
    }

    fn residuals(&self, lam: &[f64], u: &[f64], beta: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let xb: f64 = self
                    .spec
                    .x
                    .row(i)
                    .iter()
                    .zip(beta)
                    .map(|(a, b)| a * b)
                    .sum();
                let zb: f64 = self.cols.iter().map(|c| lam[c[i]] * u[c[i]]).sum();
                self.yc[i] - xb - zb
            })
            .collect()
    }

    fn eval(&self, theta: &[f64], with_grad: bool) -> Option<Eval> {
        let (q, p) = (self.q, self.p);
        let m = q + p;
        let lam = self.lambda(theta);
        let mut c = Matrix::zeros(m, m);
        for i in 0..q {
            for j in 0..=i {
                let v = lam[i] * lam[j] * self.ztz[(i, j)];
                c[(i, j)] = v;
                c[(j, i)] = v;
            }
            c[(i, i)] += 1.0;
        }
        for a in 0..p {
            for j in 0..q {
                let v = self.xtz[(a, j)] * lam[j];
                c[(q + a, j)] = v;
                c[(j, q + a)] = v;
            }
            for b in 0..p {
                c[(q + a, q + b)] = self.xtx[(a, b)];
            }
        }
        let chol = Cholesky::new(&c).ok()?;
        let mut rhs: Vec<f64> = lam.iter().zip(&self.zty).map(|(l, z)| l * z).collect();
        rhs.extend_from_slice(&self.xty);
        let sol = chol.solve(&rhs);
        let (u, beta) = sol.split_at(q);
        let r = self.residuals(&lam, u, beta);
        let pwrss = r.iter().map(|v| v * v).sum::<f64>() + u.iter().map(|v| v * v).sum::<f64>();
        if !(pwrss > 0.0) {
            return None;
        }
        let l = chol.factor();
        let rows = match self.method {
            FitMethod::Reml => m,
            FitMethod::Ml => q,
        };
        let logdet = 2.0 * (0..rows).map(|i| l[(i, i)].ln()).sum::<f64>();
        let dfr = self.df_resid();
        let deviance = logdet + dfr * (1.0 + LN_2PI + (pwrss / dfr).ln());

        let mut grad = vec![0.0; self.k()];
        if with_grad {
            for (t, w) in self.offsets.windows(2).enumerate() {
                if theta[t] == 0.0 {
                    continue;
                }
                // ‖L⁻¹ Wᵀ Z_t‖² restricted to the rows the criterion uses
                let mut frob = 0.0;
                let mut col = vec![0.0; m];
                for j in w[0]..w[1] {
                    for i in 0..q {
                        col[i] = lam[i] * self.ztz[(i, j)];
                    }
                    for a in 0..p {
                        col[q + a] = self.xtz[(a, j)];
                    }
                    let start = col.iter().position(|v| *v != 0.0).unwrap_or(m);
                    col[..start].iter_mut().for_each(|v| *v = 0.0);
                    for i in start..rows {
                        let li = l.row(i);
                        let s: f64 = li[start..i]
                            .iter()
                            .zip(&col[start..i])
                            .map(|(a, b)| a * b)
                            .sum();
                        col[i] = (col[i] - s) / li[i];
                        frob += col[i] * col[i];
                    }
                }
                let trace = self.n as f64 - frob;
                let mut zr = vec![0.0; w[1] - w[0]];
                for (i, &ci) in self.cols[t].iter().enumerate() {
                    zr[ci - w[0]] += r[i];
                }
                let zr2: f64 = zr.iter().map(|v| v * v).sum();
                let dgamma = trace - dfr * zr2 / pwrss;
                grad[t] = 2.0 * theta[t] * dgamma;
            }
        }
        Some(Eval {
            deviance,
            grad,
            chol,
            u: u.to_vec(),
            beta: beta.to_vec(),
            pwrss,
        })
    }

    /// Crude method-of-moments ratios: spread of level means beyond what the
    /// total variance would give by chance, relative to the total variance.
    fn moment_start(&self) -> Vec<f64> {
        let s2 = self.yc.iter().map(|v| v * v).sum::<f64>() / (self.n as f64 - 1.0).max(1.0);
        self.spec
            .random
            .iter()
            .map(|b| {
                let k = b.levels.len();
                let mut sum = vec![0.0; k];
                let mut cnt = vec![0usize; k];
                for (i, &l) in b.index.iter().enumerate() {
                    sum[l] += self.yc[i];
                    cnt[l] += 1;
                }
                let means: Vec<f64> = sum.iter().zip(&cnt).map(|(s, &c)| s / c as f64).collect();
                let mbar = means.iter().sum::<f64>() / k as f64;
                let var = means.iter().map(|v| (v - mbar).powi(2)).sum::<f64>()
                    / (k as f64 - 1.0).max(1.0);
                let avg_cnt = self.n as f64 / k as f64;
                let excess = (var - s2 / avg_cnt).max(0.0);
                if s2 > 0.0 {
                    (excess / s2).max(0.05)
                } else {
                    1.0
                }
            })
            .collect()
    }
}

fn optimise(
    prob: &Problem,
    start: Vec<f64>,
    max_iter: usize,
) -> Option<(Vec<f64>, f64, usize, bool)> {
    let settings = BfgsSettings {
        max_iter,
        ..Default::default()
    };
    let m = bfgs(
        |th| prob.eval(th, true).map(|e| (e.deviance, e.grad)),
        start,
        &settings,
    )?;
    let mut theta: Vec<f64> = m.x.iter().map(|v| v.abs()).collect();
    let mut dev = m.f;
    // Snap tiny components to the boundary when that does not cost deviance.
    for t in 0..theta.len() {
        if theta[t] > 0.0 && theta[t] < 1e-3 {
            let mut trial = theta.clone();
            trial[t] = 0.0;
            if let Some(e) = prob.eval(&trial, false) {
                if e.deviance <= dev + 1e-9 {
                    theta = trial;
                    dev = e.deviance.min(dev);
                }
            }
        }
    }
    Some((theta, dev, m.iterations, m.converged))
}

/// Fits the model by REML (default) or ML.
pub fn fit_reml(spec: &ModelSpec, options: &FitOptions) -> Result<MixedModelFit, ModelError> {
    let prob = Problem::new(spec, options.method);
    if prob.df_resid() <= 0.0 {
        return Err(ModelError::SingularDesign(
            "no residual degrees of freedom".into(),
        ));
    }
    let k = prob.k();
    let starts: Vec<Vec<f64>> = match &options.start_theta {
        Some(t) if t.len() == k => vec![t.clone()],
        _ => {
            let base = prob.moment_start();
            options
                .start_multipliers
                .iter()
                .map(|m| base.iter().map(|g| (g * m).sqrt()).collect())
                .collect()
        }
    };

    let mut best: Option<(Vec<f64>, f64, usize, bool)> = None;
    let mut total_iter = 0;
    for s in starts {
        if let Some(res) = optimise(&prob, s, options.max_iter) {
            total_iter += res.2;
            if best.as_ref().is_none_or(|b| res.1 < b.1) {
                best = Some(res);
            }
        }
    }
    let (theta, _, _, converged) = best.ok_or_else(|| {
        ModelError::SingularDesign("mixed-model equations are not positive definite".into())
    })?;
    let e = prob
        .eval(&theta, false)
        .ok_or_else(|| ModelError::SingularDesign("degenerate optimum".into()))?;
    Ok(assemble(
        &prob,
        spec,
        options.method,
        theta,
        e,
        converged,
        total_iter,
    ))
}

fn assemble(
    prob: &Problem,
    spec: &ModelSpec,
    method: FitMethod,
    theta: Vec<f64>,
    e: Eval,
    converged: bool,
    iterations: usize,
) -> MixedModelFit {
    let sigma2 = e.pwrss / prob.df_resid();
    let mut variance_components = IndexMap::new();
    let mut blups = IndexMap::new();
    for (t, b) in spec.random.iter().enumerate() {
        let variance = theta[t] * theta[t] * sigma2;
        variance_components.insert(
            b.label.clone(),
            VarianceComponent {
                variance,
                std_dev: variance.sqrt(),
                boundary: theta[t] == 0.0,
            },
        );
        let o = prob.offsets[t];
        let levels: IndexMap<String, f64> = b
            .levels
            .iter()
            .enumerate()
            .map(|(j, name)| (name.clone(), theta[t] * e.u[o + j]))
            .collect();
        blups.insert(b.label.clone(), levels);
    }

    // Var(β̂) = σ² (L₂₂ L₂₂ᵀ)⁻¹ with L₂₂ the trailing block of the factor.
    let (q, p) = (prob.q, prob.p);
    let l = e.chol.factor();
    let mut fixed_effects = IndexMap::new();
    let mut linv = vec![vec![0.0; p]; p];
    for c in 0..p {
        for i in c..p {
            let mut s = if i == c { 1.0 } else { 0.0 };
            for k in c..i {
                s -= l[(q + i, q + k)] * linv[k][c];
            }
            linv[i][c] = s / l[(q + i, q + i)];
        }
    }
    for (j, name) in spec.x_names.iter().enumerate() {
        let var: f64 = (0..p).map(|k| linv[k][j] * linv[k][j]).sum::<f64>() * sigma2;
        let mut est = e.beta[j];
        if j == 0 {
            est += prob.y_mean;
        }
        fixed_effects.insert(
            name.clone(),
            FixedEffect {
                estimate: est,
                standard_error: var.sqrt(),
            },
        );
    }

    MixedModelFit {
        case: spec.case,
        method,
        n_obs: prob.n,
        random_terms: spec.random_terms(),
        variance_components,
        residual_variance: sigma2,
        residual_std_dev: sigma2.sqrt(),
        fixed_effects,
        log_likelihood: -0.5 * e.deviance,
        deviance: e.deviance,
        blups,
        converged,
        iterations,
        theta,
        warnings: spec.warnings.clone(),
    }
}

/// BLUPs of one random term, keyed by level label.
pub fn blup<'a>(
    fit: &'a MixedModelFit,
    term: &str,
) -> Result<&'a IndexMap<String, f64>, ModelError> {
    let key = Term::parse(term)
        .and_then(|t| {
            fit.blups
                .keys()
                .find(|k| Term::parse(k) == Some(t))
                .cloned()
        })
        .unwrap_or_else(|| term.to_string());
    fit.blups
        .get(&key)
        .ok_or_else(|| ModelError::UnknownTerm(term.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predictions {
    pub fitted: Vec<f64>,
    pub residuals: Vec<f64>,
}

/// `Xβ̂ + Σ Z_t û_t` per record, rebuilding the design from the dataset.
pub fn predict(fit: &MixedModelFit, ds: &TrialDataset) -> Result<Predictions, ModelError> {
    let spec = build_model(ds, fit.case)?;
    let beta: Vec<f64> = spec
        .x_names
        .iter()
        .map(|n| fit.fixed_effects.get(n).map_or(0.0, |f| f.estimate))
        .collect();
    let mut fitted = spec.x.mul_vec(&beta);
    for b in &spec.random {
        if let Some(levels) = fit.blups.get(&b.label) {
            let vals: Vec<f64> = b
                .levels
                .iter()
                .map(|l| levels.get(l).copied().unwrap_or(0.0))
                .collect();
            for (f, &l) in fitted.iter_mut().zip(&b.index) {
                *f += vals[l];
            }
        }
    }
    let residuals = spec.y.iter().zip(&fitted).map(|(y, f)| y - f).collect();
    Ok(Predictions { fitted, residuals })
}

/// Deviance at a given `θ`, for tests and diagnostics.
pub fn deviance_at(spec: &ModelSpec, method: FitMethod, theta: &[f64]) -> Option<f64> {
    Problem::new(spec, method)
        .eval(theta, false)
        .map(|e| e.deviance)
}
