//! Genotype main effect plus genotype × environment interaction (GGE):
//! SVD of the environment-centred table and the standard biplot readings
//! (mean vs stability, rankings, which-won-where, discrimination and
//! representativeness, environment correlations).

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::biplot::{
    AxisInfo, AxisProjection, BiplotGeometry, BiplotMode, BiplotModel, BiplotPoint,
    EnvironmentVector, MeanAxis, Overlay, PairAngle, PointKind, RankedEntry, Sector, Winner,
    WinnerAssignment,
};
use crate::data::{DataError, TwoWayTable};
use crate::numerics::{svd, Matrix, NumericsError};

const ZERO_SV: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GgeError {
    #[error(transparent)]
    IncompleteTable(#[from] DataError),
    #[error(
        "GGE needs at least 3 genotypes and 2 environments, found {genotypes} × {environments}"
    )]
    TooSmall {
        genotypes: usize,
        environments: usize,
    },
    #[error("environment {0:?} has zero variance and cannot be standardized")]
    ZeroVarianceEnvironment(String),
    #[error("singular-value partition must lie in [0, 1], got {0}")]
    InvalidSvp(f64),
    #[error("mean-environment axis is undefined: the average environment sits at the origin")]
    DegenerateAxis,
    #[error("genotype points are collinear; no polygon can be drawn")]
    DegenerateHull,
    #[error("environment {0:?} sits at the origin; its angles are undefined")]
    ZeroVector(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Centering {
    /// Environment means removed.
    #[default]
    EnvironmentCentered,
    /// Environment means removed, then each column divided by its
    /// standard deviation.
    EnvironmentStandardized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GgeFit {
    pub genotypes: Vec<String>,
    pub environments: Vec<String>,
    pub centering: Centering,
    pub svp: f64,
    /// `min(G−1, E)` values, nonincreasing.
    pub singular_values: Vec<f64>,
    /// Fraction of the centred sum of squares per component.
    pub explained_variance: Vec<f64>,
    /// `γ·λ^f`, one row per genotype.
    pub genotype_scores: Vec<Vec<f64>>,
    /// `δ·λ^(1−f)`, one row per environment.
    pub environment_scores: Vec<Vec<f64>>,
    pub environment_means: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub environment_sd: Option<Vec<f64>>,
}

impl GgeFit {
    pub fn genotype_point(&self, i: usize) -> [f64; 2] {
        [self.genotype_scores[i][0], self.genotype_scores[i][1]]
    }

    pub fn environment_point(&self, e: usize) -> [f64; 2] {
        [self.environment_scores[e][0], self.environment_scores[e][1]]
    }

    fn genotype_points(&self) -> Vec<[f64; 2]> {
        (0..self.genotypes.len())
            .map(|i| self.genotype_point(i))
            .collect()
    }

    fn environment_points(&self) -> Vec<[f64; 2]> {
        (0..self.environments.len())
            .map(|e| self.environment_point(e))
            .collect()
    }

    fn scale(&self) -> f64 {
        self.genotype_points()
            .iter()
            .chain(&self.environment_points())
            .map(|p| p[0].abs().max(p[1].abs()))
            .fold(0.0, f64::max)
    }
}

/// Environment-centred (optionally standardized) SVD with scores split by
/// `svp`. PC1 is oriented so the average environment has a nonnegative
/// first coordinate.
pub fn fit_gge(table: &TwoWayTable, centering: Centering, svp: f64) -> Result<GgeFit, GgeError> {
    if !(0.0..=1.0).contains(&svp) {
        return Err(GgeError::InvalidSvp(svp));
    }
    let m = table.complete_matrix()?;
    let (g, e) = (m.rows(), m.cols());
    if g < 3 || e < 2 {
        return Err(GgeError::TooSmall {
            genotypes: g,
            environments: e,
        });
    }
    let labels = table.environment_labels();
    let means: Vec<f64> = (0..e)
        .map(|j| (0..g).map(|i| m[(i, j)]).sum::<f64>() / g as f64)
        .collect();
    let mut y = Matrix::from_fn(g, e, |i, j| m[(i, j)] - means[j]);
    let sd = match centering {
        Centering::EnvironmentCentered => None,
        Centering::EnvironmentStandardized => {
            let sd: Vec<f64> = (0..e)
                .map(|j| ((0..g).map(|i| y[(i, j)].powi(2)).sum::<f64>() / (g - 1) as f64).sqrt())
                .collect();
            for j in 0..e {
                if sd[j] <= 1e-14 * means[j].abs().max(1.0) {
                    return Err(GgeError::ZeroVarianceEnvironment(labels[j].clone()));
                }
            }
            y = Matrix::from_fn(g, e, |i, j| y[(i, j)] / sd[j]);
            Some(sd)
        }
    };

    let t = (g - 1).min(e);
    let s = svd(&y)?;
    let floor = ZERO_SV * m.frobenius_norm();
    let mut sigma: Vec<f64> = s.sigma[..t]
        .iter()
        .map(|&l| if l <= floor { 0.0 } else { l })
        .collect();
    let mut u = Matrix::from_fn(g, t, |i, k| if sigma[k] == 0.0 { 0.0 } else { s.u[(i, k)] });
    let mut v = Matrix::from_fn(e, t, |j, k| if sigma[k] == 0.0 { 0.0 } else { s.v[(j, k)] });
    if (0..e).map(|j| v[(j, 0)]).sum::<f64>() < 0.0 {
        for i in 0..g {
            u[(i, 0)] = -u[(i, 0)];
        }
        for j in 0..e {
            v[(j, 0)] = -v[(j, 0)];
        }
    }
    // keep -0.0 out of the output
    for l in sigma.iter_mut() {
        *l += 0.0;
    }
    let total: f64 = sigma.iter().map(|l| l * l).sum();
    let explained_variance = sigma
        .iter()
        .map(|l| if total > 0.0 { l * l / total } else { 0.0 })
        .collect();
    let genotype_scores = (0..g)
        .map(|i| {
            (0..t)
                .map(|k| u[(i, k)] * sigma[k].powf(svp) + 0.0)
                .collect()
        })
        .collect();
    let environment_scores = (0..e)
        .map(|j| {
            (0..t)
                .map(|k| v[(j, k)] * sigma[k].powf(1.0 - svp) + 0.0)
                .collect()
        })
        .collect();
    Ok(GgeFit {
        genotypes: table.genotypes.clone(),
        environments: labels,
        centering,
        svp,
        singular_values: sigma,
        explained_variance,
        genotype_scores,
        environment_scores,
        environment_means: means,
        environment_sd: sd,
    })
}

fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

fn cross(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

fn norm(a: [f64; 2]) -> f64 {
    a[0].hypot(a[1])
}

/// Unsigned angle in degrees; atan2 keeps it accurate near 0° and 180°.
fn angle_between(a: [f64; 2], b: [f64; 2]) -> f64 {
    cross(a, b).abs().atan2(dot(a, b)).to_degrees()
}

/// Axis through the origin and the average environment on PC1/PC2.
pub fn mean_environment_axis(fit: &GgeFit) -> Result<MeanAxis, GgeError> {
    let pts = fit.environment_points();
    let n = pts.len() as f64;
    let mean = [
        pts.iter().map(|p| p[0]).sum::<f64>() / n,
        pts.iter().map(|p| p[1]).sum::<f64>() / n,
    ];
    let len = norm(mean);
    if !(len > 1e-12 * fit.scale()) || len == 0.0 {
        return Err(GgeError::DegenerateAxis);
    }
    Ok(MeanAxis {
        direction: [mean[0] / len, mean[1] / len],
        mean_point: mean,
    })
}

/// 1-based ranks, ties sharing the lowest rank.
fn min_ranks(values: &[f64], descending: bool) -> Vec<usize> {
    values
        .iter()
        .map(|v| {
            1 + values
                .iter()
                .filter(|w| if descending { *w > v } else { *w < v })
                .count()
        })
        .collect()
}

/// Projection of each genotype on the mean-environment axis (performance)
/// and its distance from the axis (instability).
pub fn mean_vs_stability(fit: &GgeFit) -> Result<Vec<AxisProjection>, GgeError> {
    let axis = mean_environment_axis(fit)?;
    let a = axis.direction;
    let pts = fit.genotype_points();
    let proj: Vec<f64> = pts.iter().map(|p| dot(*p, a)).collect();
    let dist: Vec<f64> = pts.iter().map(|p| cross(a, *p).abs()).collect();
    let mean_rank = min_ranks(&proj, true);
    let stability_rank = min_ranks(&dist, false);
    Ok(fit
        .genotypes
        .iter()
        .enumerate()
        .map(|(i, label)| AxisProjection {
            label: label.clone(),
            projection: proj[i],
            distance: dist[i],
            foot: [a[0] * proj[i], a[1] * proj[i]],
            mean_rank: mean_rank[i],
            stability_rank: stability_rank[i],
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankTarget {
    Genotypes,
    Environments,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    /// Ideal point on the axis at the largest projection.
    pub ideal: [f64; 2],
    pub entries: Vec<RankedEntry>,
    /// Concentric circle radii (distance quartiles).
    pub radii: Vec<f64>,
}

/// Entries ranked by distance to the ideal point; ties keep input order.
pub fn ranking(fit: &GgeFit, target: RankTarget) -> Result<Ranking, GgeError> {
    let axis = mean_environment_axis(fit)?;
    let a = axis.direction;
    let (labels, pts) = match target {
        RankTarget::Genotypes => (&fit.genotypes, fit.genotype_points()),
        RankTarget::Environments => (&fit.environments, fit.environment_points()),
    };
    let proj: Vec<f64> = pts.iter().map(|p| dot(*p, a)).collect();
    let best = proj.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ideal = [a[0] * best, a[1] * best];
    let dist: Vec<f64> = pts
        .iter()
        .map(|p| norm([p[0] - ideal[0], p[1] - ideal[1]]))
        .collect();
    let mut order: Vec<usize> = (0..pts.len()).collect();
    order.sort_by(|&i, &j| {
        dist[i]
            .partial_cmp(&dist[j])
            .unwrap_or(Ordering::Equal)
            .then(proj[j].partial_cmp(&proj[i]).unwrap_or(Ordering::Equal))
    });
    let entries = order
        .iter()
        .enumerate()
        .map(|(r, &i)| RankedEntry {
            label: labels[i].clone(),
            distance: dist[i],
            projection: proj[i],
            rank: r + 1,
        })
        .collect();
    let mut sorted = dist.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    let mut radii: Vec<f64> = Vec::new();
    for q in [0.25, 0.5, 0.75, 1.0] {
        let r = quantile(&sorted, q);
        if r > 0.0 && radii.last().is_none_or(|&last| r > last) {
            radii.push(r);
        }
    }
    Ok(Ranking {
        ideal,
        entries,
        radii,
    })
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = q * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhichWonWhere {
    /// Hull vertices counter-clockwise, as genotype indices.
    pub hull: Vec<usize>,
    /// Outward unit normals of the hull edges; edge k joins hull[k] and
    /// hull[k+1].
    pub rays: Vec<[f64; 2]>,
    pub assignment: WinnerAssignment,
}

/// Convex hull by monotone chain, counter-clockwise, collinear points
/// dropped. Returns indices into `pts`.
fn convex_hull(pts: &[[f64; 2]], tol: f64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..pts.len()).collect();
    idx.sort_by(|&a, &b| {
        pts[a][0]
            .partial_cmp(&pts[b][0])
            .unwrap_or(Ordering::Equal)
            .then(pts[a][1].partial_cmp(&pts[b][1]).unwrap_or(Ordering::Equal))
            .then(a.cmp(&b))
    });
    let turn = |o: usize, a: usize, b: usize| {
        cross(
            [pts[a][0] - pts[o][0], pts[a][1] - pts[o][1]],
            [pts[b][0] - pts[o][0], pts[b][1] - pts[o][1]],
        )
    };
    let chain = |iter: &mut dyn Iterator<Item = usize>| {
        let mut h: Vec<usize> = Vec::new();
        for p in iter {
            while h.len() >= 2 && turn(h[h.len() - 2], h[h.len() - 1], p) <= tol {
                h.pop();
            }
            h.push(p);
        }
        h.pop();
        h
    };
    let mut lower = chain(&mut idx.iter().copied());
    let upper = chain(&mut idx.iter().rev().copied());
    lower.extend(upper);
    lower
}

fn angle_deg(d: [f64; 2]) -> f64 {
    let a = d[1].atan2(d[0]).to_degrees();
    if a < 0.0 {
        a + 360.0
    } else {
        a
    }
}

/// Polygon on the genotype points, sector rays perpendicular to its
/// edges, and the winning genotype per environment. An environment lying
/// exactly on a ray goes to the sector counter-clockwise of it.
pub fn which_won_where(fit: &GgeFit) -> Result<WhichWonWhere, GgeError> {
    let pts = fit.genotype_points();
    let scale = fit.scale();
    let hull = convex_hull(&pts, 1e-12 * scale * scale);
    if hull.len() < 3 || scale == 0.0 {
        return Err(GgeError::DegenerateHull);
    }
    let h = hull.len();
    let rays: Vec<[f64; 2]> = (0..h)
        .map(|k| {
            let (a, b) = (pts[hull[k]], pts[hull[(k + 1) % h]]);
            let d = [b[0] - a[0], b[1] - a[1]];
            let n = norm(d);
            [d[1] / n, -d[0] / n]
        })
        .collect();
    // vertex k owns directions from ray k−1 (inclusive) to ray k
    let starts: Vec<f64> = (0..h).map(|k| angle_deg(rays[(k + h - 1) % h])).collect();
    let ends: Vec<f64> = (0..h).map(|k| angle_deg(rays[k])).collect();
    let span = |k: usize| (ends[k] - starts[k]).rem_euclid(360.0);
    let owner = |theta: f64| -> usize {
        (0..h)
            .find(|&k| (theta - starts[k]).rem_euclid(360.0) < span(k))
            .unwrap_or_else(|| {
                // rounding at a ray: nearest start
                (0..h)
                    .min_by(|&a, &b| {
                        let da = (theta - starts[a])
                            .rem_euclid(360.0)
                            .min((starts[a] - theta).rem_euclid(360.0));
                        let db = (theta - starts[b])
                            .rem_euclid(360.0)
                            .min((starts[b] - theta).rem_euclid(360.0));
                        da.partial_cmp(&db).unwrap_or(Ordering::Equal)
                    })
                    .unwrap_or(0)
            })
    };

    let env_pts = fit.environment_points();
    let mut members: Vec<Vec<String>> = vec![Vec::new(); h];
    let mut winners = Vec::with_capacity(env_pts.len());
    for (e, p) in env_pts.iter().enumerate() {
        let k = owner(angle_deg(*p));
        members[k].push(fit.environments[e].clone());
        winners.push(Winner {
            environment: fit.environments[e].clone(),
            genotype: fit.genotypes[hull[k]].clone(),
        });
    }
    let sectors = (0..h)
        .map(|k| Sector {
            winner: fit.genotypes[hull[k]].clone(),
            start_angle: starts[k],
            end_angle: ends[k],
            environments: std::mem::take(&mut members[k]),
        })
        .collect();
    Ok(WhichWonWhere {
        hull,
        rays,
        assignment: WinnerAssignment { winners, sectors },
    })
}

/// Vector length (discrimination) and angle to the mean-environment axis
/// (representativeness) of every environment.
pub fn discrimination_representativeness(fit: &GgeFit) -> Result<Vec<EnvironmentVector>, GgeError> {
    let a = mean_environment_axis(fit)?.direction;
    Ok(fit
        .environment_points()
        .iter()
        .zip(&fit.environments)
        .map(|(p, label)| {
            let length = norm(*p);
            let angle = if length > 0.0 {
                angle_between(*p, a)
            } else {
                90.0
            };
            EnvironmentVector {
                label: label.clone(),
                length,
                angle_to_axis: angle,
                representative: angle < 90.0,
            }
        })
        .collect())
}

/// Angles and cosines between every pair of environment vectors.
pub fn environment_relationship(fit: &GgeFit) -> Result<Vec<PairAngle>, GgeError> {
    let pts = fit.environment_points();
    let tol = 1e-12 * fit.scale();
    for (p, label) in pts.iter().zip(&fit.environments) {
        if norm(*p) <= tol {
            return Err(GgeError::ZeroVector(label.clone()));
        }
    }
    let mut out = Vec::new();
    for a in 0..pts.len() {
        for b in a + 1..pts.len() {
            let cosine = (dot(pts[a], pts[b]) / (norm(pts[a]) * norm(pts[b]))).clamp(-1.0, 1.0);
            out.push(PairAngle {
                a: fit.environments[a].clone(),
                b: fit.environments[b].clone(),
                angle: angle_between(pts[a], pts[b]),
                cosine,
            });
        }
    }
    Ok(out)
}

/// Geometry of one biplot reading at the given partition (the mode's
/// default when `None`).
pub fn gge_biplot(
    table: &TwoWayTable,
    mode: BiplotMode,
    centering: Centering,
    svp: Option<f64>,
) -> Result<BiplotGeometry, GgeError> {
    let fit = fit_gge(table, centering, svp.unwrap_or(mode.default_svp()))?;
    biplot_geometry(&fit, mode)
}

/// Geometry of one biplot reading on an existing fit.
pub fn biplot_geometry(fit: &GgeFit, mode: BiplotMode) -> Result<BiplotGeometry, GgeError> {
    let mut warnings = Vec::new();
    let mean_axis = match mean_environment_axis(fit) {
        Ok(a) => Some(a),
        Err(e) => match mode {
            BiplotMode::PcScatter | BiplotMode::WhichWonWhere | BiplotMode::EnvRelationship => {
                warnings.push(e.to_string());
                None
            }
            _ => return Err(e),
        },
    };
    let overlay = match mode {
        BiplotMode::PcScatter => Overlay::None,
        BiplotMode::MeanVsStability => Overlay::Droplines {
            entries: mean_vs_stability(fit)?,
        },
        BiplotMode::RankingGenotypes | BiplotMode::RankingEnvironments => {
            let target = if mode == BiplotMode::RankingGenotypes {
                RankTarget::Genotypes
            } else {
                RankTarget::Environments
            };
            let r = ranking(fit, target)?;
            Overlay::Circles {
                center: r.ideal,
                radii: r.radii,
                ranking: r.entries,
            }
        }
        BiplotMode::WhichWonWhere => {
            let w = which_won_where(fit)?;
            Overlay::Hull {
                vertices: w.hull.iter().map(|&i| fit.genotypes[i].clone()).collect(),
                polygon: w.hull.iter().map(|&i| fit.genotype_point(i)).collect(),
                rays: w.rays,
                assignment: w.assignment,
            }
        }
        BiplotMode::DiscrimVsRepr => Overlay::Vectors {
            environments: discrimination_representativeness(fit)?,
        },
        BiplotMode::EnvRelationship => Overlay::Angles {
            pairs: environment_relationship(fit)?,
        },
    };
    let mut points = Vec::with_capacity(fit.genotypes.len() + fit.environments.len());
    for (i, label) in fit.genotypes.iter().enumerate() {
        let [x, y] = fit.genotype_point(i);
        points.push(BiplotPoint {
            label: label.clone(),
            kind: PointKind::Genotype,
            x,
            y,
            z: None,
        });
    }
    for (e, label) in fit.environments.iter().enumerate() {
        let [x, y] = fit.environment_point(e);
        points.push(BiplotPoint {
            label: label.clone(),
            kind: PointKind::Environment,
            x,
            y,
            z: None,
        });
    }
    Ok(BiplotGeometry {
        model: BiplotModel::Gge,
        mode,
        svp: fit.svp,
        axes: (0..2)
            .map(|k| AxisInfo {
                component: k,
                explained_percent: 100.0 * fit.explained_variance[k],
            })
            .collect(),
        points,
        mean_axis,
        overlay,
        warnings,
    })
}
