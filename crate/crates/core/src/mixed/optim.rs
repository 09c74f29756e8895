//! Quasi-Newton minimiser used for the profiled deviance.

pub(crate) struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub(crate) struct BfgsSettings {
    pub max_iter: usize,
    /// Converged when both the objective change and the largest parameter
    /// change fall below these.
    pub f_tol: f64,
    pub x_tol: f64,
    pub g_tol: f64,
}

impl Default for BfgsSettings {
    fn default() -> Self {
        Self {
            max_iter: 500,
            f_tol: 1e-10,
            x_tol: 1e-8,
            g_tol: 1e-7,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// BFGS with Armijo backtracking. `fg` returns the objective and gradient, or
/// `None` where the objective is undefined (treated as +∞ by the line search).
pub(crate) fn bfgs<F>(mut fg: F, x0: Vec<f64>, s: &BfgsSettings) -> Option<Minimum>
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let k = x0.len();
    let mut x = x0;
    let (mut f, mut g) = fg(&x)?;
    if k == 0 {
        return Some(Minimum {
            x,
            f,
            iterations: 0,
            converged: true,
        });
    }
    let mut h: Vec<Vec<f64>> = (0..k)
        .map(|i| (0..k).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let mut first = true;
    for it in 1..=s.max_iter {
        if g.iter().all(|v| v.abs() < s.g_tol) {
            return Some(Minimum {
                x,
                f,
                iterations: it - 1,
                converged: true,
            });
        }
        let mut d: Vec<f64> = h.iter().map(|row| -dot(row, &g)).collect();
        let mut slope = dot(&d, &g);
        if slope >= 0.0 {
            // not a descent direction: restart from steepest descent
            for (i, row) in h.iter_mut().enumerate() {
                row.iter_mut()
                    .enumerate()
                    .for_each(|(j, v)| *v = if i == j { 1.0 } else { 0.0 });
            }
            d = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + step * b).collect();
            if let Some((ft, gt)) = fg(&trial) {
                if ft.is_finite() && ft <= f + 1e-4 * step * slope {
                    accepted = Some((trial, ft, gt));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((xn, fnew, gn)) = accepted else {
            // no progress possible along any tried step
            let converged = g.iter().all(|v| v.abs() < s.g_tol.sqrt());
            return Some(Minimum {
                x,
                f,
                iterations: it,
                converged,
            });
        };
        let sv: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let df = (f - fnew).abs();
        let dx = sv.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        x = xn;
        f = fnew;
        g = gn;
        if df < s.f_tol && dx < s.x_tol {
            return Some(Minimum {
                x,
                f,
                iterations: it,
                converged: true,
            });
        }
        let sy = dot(&sv, &yv);
        if sy > 1e-12 * dot(&sv, &sv).sqrt() * dot(&yv, &yv).sqrt() {
            if first {
                let scale = sy / dot(&yv, &yv);
                for (i, row) in h.iter_mut().enumerate() {
                    row.iter_mut()
                        .enumerate()
                        .for_each(|(j, v)| *v = if i == j { scale } else { 0.0 });
                }
                first = false;
            }
            let hy: Vec<f64> = h.iter().map(|row| dot(row, &yv)).collect();
            let yhy = dot(&yv, &hy);
            let rho = 1.0 / sy;
            for i in 0..k {
                for j in 0..k {
                    h[i][j] +=
                        rho * ((1.0 + rho * yhy) * sv[i] * sv[j] - hy[i] * sv[j] - sv[i] * hy[j]);
                }
            }
        }
    }
    Some(Minimum {
        x,
        f,
        iterations: s.max_iter,
        converged: false,
    })
}
