//! Normal, Student t, F and chi-square distributions.
//!
//! CDFs go through the regularized incomplete gamma and beta functions
//! (series plus modified-Lentz continued fractions). Upper tails are computed
//! directly rather than as `1 - cdf` so small p-values keep their precision.

use std::f64::consts::{PI, SQRT_2};

use serde::{Deserialize, Serialize};

use super::NumericsError;

const EPS: f64 = 1e-16;
const TINY: f64 = 1e-300;
const MAX_ITER: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistKind {
    Normal,
    T,
    F,
    Chisq,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Distribution {
    Normal,
    StudentT { df: f64 },
    F { df1: f64, df2: f64 },
    ChiSquared { df: f64 },
}

fn check_df(df: f64) -> Result<f64, NumericsError> {
    if df.is_finite() && df > 0.0 {
        Ok(df)
    } else {
        Err(NumericsError::InvalidDf(df))
    }
}

/// CDF by kind; `df2` is only read for F and `df1` is ignored for the normal.
pub fn dist_cdf(kind: DistKind, x: f64, df1: f64, df2: f64) -> Result<f64, NumericsError> {
    let d = match kind {
        DistKind::Normal => Distribution::Normal,
        DistKind::T => Distribution::student_t(df1)?,
        DistKind::F => Distribution::f(df1, df2)?,
        DistKind::Chisq => Distribution::chi_squared(df1)?,
    };
    Ok(d.cdf(x))
}

impl Distribution {
    pub fn student_t(df: f64) -> Result<Self, NumericsError> {
        Ok(Self::StudentT { df: check_df(df)? })
    }

    pub fn f(df1: f64, df2: f64) -> Result<Self, NumericsError> {
        Ok(Self::F {
            df1: check_df(df1)?,
            df2: check_df(df2)?,
        })
    }

    pub fn chi_squared(df: f64) -> Result<Self, NumericsError> {
        Ok(Self::ChiSquared { df: check_df(df)? })
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x.is_nan() {
            return f64::NAN;
        }
        match *self {
            Self::Normal => normal_cdf(x),
            Self::StudentT { df } => {
                if x.is_infinite() {
                    return if x > 0.0 { 1.0 } else { 0.0 };
                }
                // Lower and upper arguments passed separately so neither is
                // formed as 1 - (something close to 1).
                let x2 = x * x;
                let tail = 0.5 * beta_inc_xy(df / 2.0, 0.5, df / (df + x2), x2 / (df + x2));
                if x > 0.0 {
                    1.0 - tail
                } else {
                    tail
                }
            }
            Self::F { df1, df2 } => {
                if x <= 0.0 {
                    0.0
                } else if x.is_infinite() {
                    1.0
                } else {
                    let u = df1 * x;
                    beta_inc_xy(df1 / 2.0, df2 / 2.0, u / (u + df2), df2 / (u + df2))
                }
            }
            Self::ChiSquared { df } => {
                if x <= 0.0 {
                    0.0
                } else {
                    gamma_p(df / 2.0, x / 2.0)
                }
            }
        }
    }

    /// Upper tail `P(X > x)`.
    pub fn sf(&self, x: f64) -> f64 {
        if x.is_nan() {
            return f64::NAN;
        }
        match *self {
            Self::Normal => normal_cdf(-x),
            Self::StudentT { .. } => Self::cdf(self, -x),
            Self::F { df1, df2 } => {
                if x <= 0.0 {
                    1.0
                } else if x.is_infinite() {
                    0.0
                } else {
                    let u = df1 * x;
                    beta_inc_xy(df2 / 2.0, df1 / 2.0, df2 / (u + df2), u / (u + df2))
                }
            }
            Self::ChiSquared { df } => {
                if x <= 0.0 {
                    1.0
                } else {
                    gamma_q(df / 2.0, x / 2.0)
                }
            }
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        match *self {
            Self::Normal => (-0.5 * x * x).exp() / (2.0 * PI).sqrt(),
            Self::StudentT { df } => (ln_gamma((df + 1.0) / 2.0)
                - ln_gamma(df / 2.0)
                - 0.5 * (df * PI).ln()
                - (df + 1.0) / 2.0 * (x * x / df).ln_1p())
            .exp(),
            Self::F { df1, df2 } => {
                if x <= 0.0 {
                    return 0.0;
                }
                let u = df1 * x;
                (0.5 * (df1 * u.ln() + df2 * df2.ln() - (df1 + df2) * (u + df2).ln())
                    - x.ln()
                    - ln_beta(df1 / 2.0, df2 / 2.0))
                .exp()
            }
            Self::ChiSquared { df } => {
                if x <= 0.0 {
                    return 0.0;
                }
                let k = df / 2.0;
                ((k - 1.0) * x.ln() - x / 2.0 - k * 2f64.ln() - ln_gamma(k)).exp()
            }
        }
    }

    /// Inverse CDF by bracketing bisection finished with Newton steps.
    pub fn quantile(&self, p: f64) -> Result<f64, NumericsError> {
        if !(0.0..=1.0).contains(&p) {
            return Err(NumericsError::InvalidProbability(p));
        }
        let lower_bound = match self {
            Self::Normal | Self::StudentT { .. } => f64::NEG_INFINITY,
            _ => 0.0,
        };
        if p == 0.0 {
            return Ok(lower_bound);
        }
        if p == 1.0 {
            return Ok(f64::INFINITY);
        }
        let (mut lo, mut hi) = if lower_bound == 0.0 {
            (0.0, 1.0)
        } else {
            (-1.0, 1.0)
        };
        while self.cdf(hi) < p {
            lo = hi;
            hi *= 2.0;
        }
        while lower_bound != 0.0 && self.cdf(lo) > p {
            hi = lo;
            lo *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-10 * hi.abs().max(1.0) {
                break;
            }
        }
        let mut x = 0.5 * (lo + hi);
        for _ in 0..4 {
            let dens = self.pdf(x);
            if !(dens > 0.0) {
                break;
            }
            let next = x - (self.cdf(x) - p) / dens;
            if !(next > lo && next < hi) {
                break;
            }
            x = next;
        }
        Ok(x)
    }
}

fn normal_cdf(x: f64) -> f64 {
    if x.is_infinite() {
        return if x > 0.0 { 1.0 } else { 0.0 };
    }
    // Φ(x) = ½ erfc(−x/√2) and erfc(z) = Q(½, z²) for z ≥ 0.
    let z = x / SQRT_2;
    let half_tail = 0.5 * gamma_q(0.5, z * z);
    if x < 0.0 {
        half_tail
    } else {
        1.0 - half_tail
    }
}

/// `ln Γ(x)` for `x > 0` (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        return (PI / (PI * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + G + 0.5;
    for (i, &c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

pub fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Regularized lower incomplete gamma `P(a, x)`.
pub fn gamma_p(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x < a + 1.0 {
        gamma_series(a, x)
    } else {
        1.0 - gamma_cf(a, x)
    }
}

/// Regularized upper incomplete gamma `Q(a, x)`.
pub fn gamma_q(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < a + 1.0 {
        1.0 - gamma_series(a, x)
    } else {
        gamma_cf(a, x)
    }
}

fn gamma_series(a: f64, x: f64) -> f64 {
    let mut ap = a;
    let mut del = 1.0 / a;
    let mut sum = del;
    for _ in 0..MAX_ITER {
        ap += 1.0;
        del *= x / ap;
        sum += del;
        if del.abs() < sum.abs() * EPS {
            break;
        }
    }
    sum * (-x + a * x.ln() - ln_gamma(a)).exp()
}

fn gamma_cf(a: f64, x: f64) -> f64 {
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    (-x + a * x.ln() - ln_gamma(a)).exp() * h
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn beta_inc(a: f64, b: f64, x: f64) -> f64 {
    beta_inc_xy(a, b, x, 1.0 - x)
}

/// `I_x(a, b)` with `y = 1 - x` supplied by the caller at full precision.
fn beta_inc_xy(a: f64, b: f64, x: f64, y: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if y <= 0.0 {
        return 1.0;
    }
    let ln_front = a * x.ln() + b * y.ln() - ln_beta(a, b);
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * beta_cf(a, b, x) / a
    } else {
        1.0 - ln_front.exp() * beta_cf(b, a, y) / b
    }
}

fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}
