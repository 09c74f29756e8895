//! Hand-written SVG 1.1 for biplots and residual scatters. Output depends
//! only on the inputs and the style, so files can be compared byte for byte.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::biplot::{BiplotGeometry, BiplotMode, BiplotModel, Overlay, PointKind};

const SIZE: f64 = 800.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvgStyle {
    /// Rendered width and height in pixels; the viewBox stays 800 × 800.
    pub pixels: u32,
    pub margin: f64,
    pub font_size: f64,
    pub genotype_color: String,
    pub environment_color: String,
    pub overlay_color: String,
    pub point_radius: f64,
    pub title: Option<String>,
}

impl Default for SvgStyle {
    fn default() -> Self {
        Self {
            pixels: 800,
            margin: 70.0,
            font_size: 13.0,
            genotype_color: "#1f4e9c".into(),
            environment_color: "#b22222".into(),
            overlay_color: "#2e7d32".into(),
            point_radius: 4.0,
            title: None,
        }
    }
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

/// Two decimals, no negative zero.
fn n(v: f64) -> String {
    let s = format!("{v:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

/// Data → viewBox mapping with equal scale on both axes.
struct Frame {
    cx: f64,
    cy: f64,
    sx: f64,
    sy: f64,
}

impl Frame {
    fn x(&self, v: f64) -> f64 {
        self.cx + v * self.sx
    }
    fn y(&self, v: f64) -> f64 {
        self.cy - v * self.sy
    }
}

fn header(out: &mut String, style: &SvgStyle, title: &str) {
    let _ = writeln!(out, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{p}" height="{p}" viewBox="0 0 800 800" font-family="sans-serif" font-size="{f}">"#,
        p = style.pixels,
        f = n(style.font_size)
    );
    let _ = writeln!(out, "<title>{}</title>", escape(title));
    let _ = writeln!(
        out,
        r##"<rect x="0" y="0" width="800" height="800" fill="#ffffff"/>"##
    );
}

fn mode_title(g: &BiplotGeometry) -> String {
    let model = match g.model {
        BiplotModel::Ammi => "AMMI",
        BiplotModel::Gge => "GGE",
    };
    let what = match g.mode {
        BiplotMode::PcScatter => "PC scatter",
        BiplotMode::MeanVsStability => "Mean vs. stability",
        BiplotMode::RankingGenotypes => "Ranking genotypes",
        BiplotMode::RankingEnvironments => "Ranking environments",
        BiplotMode::WhichWonWhere => "Which won where",
        BiplotMode::DiscrimVsRepr => "Discriminativeness vs. representativeness",
        BiplotMode::EnvRelationship => "Relationship among environments",
    };
    format!("{model} biplot: {what}")
}

/// Largest absolute coordinate touched by points or overlays.
fn extent(g: &BiplotGeometry) -> f64 {
    let mut m: f64 = 0.0;
    let mut take = |x: f64, y: f64| m = m.max(x.abs()).max(y.abs());
    for p in &g.points {
        take(p.x, p.y);
    }
    match &g.overlay {
        Overlay::Circles { center, radii, .. } => {
            let r = radii.last().copied().unwrap_or(0.0);
            take(center[0].abs() + r, center[1].abs() + r);
        }
        Overlay::Droplines { entries } => {
            for e in entries {
                take(e.foot[0], e.foot[1]);
            }
        }
        _ => {}
    }
    if let Some(a) = &g.mean_axis {
        take(a.mean_point[0], a.mean_point[1]);
    }
    if m > 0.0 && m.is_finite() {
        m
    } else {
        1.0
    }
}

/// Renders any biplot geometry. Degenerate inputs still produce a valid
/// document, annotated with the geometry's warnings.
pub fn render_svg(g: &BiplotGeometry, style: &SvgStyle) -> String {
    let mut out = String::new();
    let title = style.title.clone().unwrap_or_else(|| mode_title(g));
    header(&mut out, style, &title);
    let half = SIZE / 2.0 - style.margin;
    let s = half / (1.08 * extent(g));
    let f = Frame {
        cx: SIZE / 2.0,
        cy: SIZE / 2.0,
        sx: s,
        sy: s,
    };
    let prefix = match g.model {
        BiplotModel::Ammi => "IPC",
        BiplotModel::Gge => "PC",
    };

    // axes through the origin
    let lo = style.margin;
    let hi = SIZE - style.margin;
    let _ = writeln!(
        out,
        r##"<g class="axes" stroke="#888888" stroke-width="1">"##
    );
    let _ = writeln!(
        out,
        r#"<line x1="{}" y1="{}" x2="{}" y2="{}"/>"#,
        n(lo),
        n(f.cy),
        n(hi),
        n(f.cy)
    );
    let _ = writeln!(
        out,
        r#"<line x1="{}" y1="{}" x2="{}" y2="{}"/>"#,
        n(f.cx),
        n(lo),
        n(f.cx),
        n(hi)
    );
    let _ = writeln!(out, "</g>");
    let label = |i: usize| {
        g.axes
            .get(i)
            .map(|a| format!("{prefix}{} ({:.1}%)", a.component + 1, a.explained_percent))
            .unwrap_or_default()
    };
    let _ = writeln!(
        out,
        r#"<text class="axis-label" x="{}" y="{}" text-anchor="middle">{}</text>"#,
        n(SIZE / 2.0),
        n(SIZE - style.margin / 3.0),
        escape(&label(0))
    );
    let _ = writeln!(
        out,
        r#"<text class="axis-label" x="{x}" y="{y}" text-anchor="middle" transform="rotate(-90 {x} {y})">{}</text>"#,
        escape(&label(1)),
        x = n(style.margin / 3.0),
        y = n(SIZE / 2.0)
    );
    if g.axes.len() > 2 {
        let _ = writeln!(
            out,
            r#"<text class="axis-label" x="{}" y="{}" text-anchor="end">third axis {} shown as point size</text>"#,
            n(SIZE - 10.0),
            n(20.0),
            escape(&label(2))
        );
    }
    let _ = writeln!(
        out,
        r#"<text class="plot-title" x="400" y="{}" text-anchor="middle" font-size="{}">{}</text>"#,
        n(style.margin / 2.0),
        n(style.font_size * 1.2),
        escape(&title)
    );

    render_overlay(&mut out, g, &f, style);

    if let Some(a) = &g.mean_axis {
        let r = 1.08 * extent(g);
        let _ = writeln!(
            out,
            r#"<g class="mean-axis" stroke="{c}" stroke-width="1.5"><line x1="{}" y1="{}" x2="{}" y2="{}"/><circle cx="{}" cy="{}" r="5" fill="none"/></g>"#,
            n(f.x(-a.direction[0] * r)),
            n(f.y(-a.direction[1] * r)),
            n(f.x(a.direction[0] * r)),
            n(f.y(a.direction[1] * r)),
            n(f.x(a.mean_point[0])),
            n(f.y(a.mean_point[1])),
            c = escape(&style.overlay_color)
        );
    }

    // points last so they sit on top
    let zmax = g
        .points
        .iter()
        .filter_map(|p| p.z)
        .map(f64::abs)
        .fold(0.0, f64::max);
    for p in &g.points {
        let (class, color) = match p.kind {
            PointKind::Genotype => ("genotype", &style.genotype_color),
            PointKind::Environment => ("environment", &style.environment_color),
        };
        let r = match p.z {
            Some(z) if zmax > 0.0 => style.point_radius * (0.6 + 0.8 * z.abs() / zmax),
            _ => style.point_radius,
        };
        let (x, y) = (f.x(p.x), f.y(p.y));
        let marker = match p.kind {
            PointKind::Genotype => format!(r#"<circle cx="{}" cy="{}" r="{}"/>"#, n(x), n(y), n(r)),
            PointKind::Environment => format!(
                r#"<rect x="{}" y="{}" width="{w}" height="{w}"/>"#,
                n(x - r),
                n(y - r),
                w = n(2.0 * r)
            ),
        };
        let _ = writeln!(
            out,
            r#"<g class="{class}" fill="{c}" data-label="{l}">{marker}<text x="{}" y="{}">{l}</text></g>"#,
            n(x + r + 2.0),
            n(y - r - 2.0),
            c = escape(color),
            l = escape(&p.label)
        );
    }

    for (i, w) in g.warnings.iter().enumerate() {
        let _ = writeln!(
            out,
            r##"<text class="warning" x="10" y="{}" fill="#cc0000">{}</text>"##,
            n(SIZE - 10.0 - 16.0 * i as f64),
            escape(w)
        );
    }
    out.push_str("</svg>\n");
    out
}

fn render_overlay(out: &mut String, g: &BiplotGeometry, f: &Frame, style: &SvgStyle) {
    let c = escape(&style.overlay_color);
    let reach = 1.08 * extent(g);
    match &g.overlay {
        Overlay::None => {}
        Overlay::Hull {
            polygon,
            rays,
            assignment,
            ..
        } => {
            let pts: Vec<String> = polygon
                .iter()
                .map(|p| format!("{},{}", n(f.x(p[0])), n(f.y(p[1]))))
                .collect();
            let _ = writeln!(
                out,
                r#"<polygon class="hull" points="{}" fill="none" stroke="{c}" stroke-width="1.5"/>"#,
                pts.join(" ")
            );
            let _ = writeln!(
                out,
                r#"<g class="sector-rays" stroke="{c}" stroke-dasharray="6 4">"#
            );
            for r in rays {
                let _ = writeln!(
                    out,
                    r#"<line x1="{}" y1="{}" x2="{}" y2="{}"/>"#,
                    n(f.cx),
                    n(f.cy),
                    n(f.x(r[0] * reach)),
                    n(f.y(r[1] * reach))
                );
            }
            let _ = writeln!(out, "</g>");
            let _ = writeln!(
                out,
                r#"<g class="sector-winners" fill="{c}" font-style="italic">"#
            );
            for s in assignment
                .sectors
                .iter()
                .filter(|s| !s.environments.is_empty())
            {
                let mid = (s.start_angle + (s.end_angle - s.start_angle).rem_euclid(360.0) / 2.0)
                    .to_radians();
                let _ = writeln!(
                    out,
                    r#"<text x="{}" y="{}" text-anchor="middle">{}: {}</text>"#,
                    n(f.x(0.85 * reach * mid.cos())),
                    n(f.y(0.85 * reach * mid.sin())),
                    escape(&s.winner),
                    escape(&s.environments.join(", "))
                );
            }
            let _ = writeln!(out, "</g>");
        }
        Overlay::Droplines { entries } => {
            let _ = writeln!(
                out,
                r#"<g class="droplines" stroke="{c}" stroke-dasharray="3 3">"#
            );
            for e in entries {
                if let Some(p) = g
                    .points
                    .iter()
                    .find(|p| p.kind == PointKind::Genotype && p.label == e.label)
                {
                    let _ = writeln!(
                        out,
                        r#"<line x1="{}" y1="{}" x2="{}" y2="{}"/>"#,
                        n(f.x(p.x)),
                        n(f.y(p.y)),
                        n(f.x(e.foot[0])),
                        n(f.y(e.foot[1]))
                    );
                }
            }
            let _ = writeln!(out, "</g>");
        }
        Overlay::Circles { center, radii, .. } => {
            let _ = writeln!(out, r#"<g class="rank-circles" fill="none" stroke="{c}">"#);
            for r in radii {
                let _ = writeln!(
                    out,
                    r#"<circle cx="{}" cy="{}" r="{}"/>"#,
                    n(f.x(center[0])),
                    n(f.y(center[1])),
                    n(r * f.sx)
                );
            }
            let _ = writeln!(
                out,
                r#"<circle class="ideal" cx="{}" cy="{}" r="4" fill="{c}"/>"#,
                n(f.x(center[0])),
                n(f.y(center[1]))
            );
            let _ = writeln!(out, "</g>");
        }
        Overlay::Vectors { .. } | Overlay::Angles { .. } => {
            let _ = writeln!(
                out,
                r#"<g class="env-vectors" stroke="{}">"#,
                escape(&style.environment_color)
            );
            for p in g.points.iter().filter(|p| p.kind == PointKind::Environment) {
                let _ = writeln!(
                    out,
                    r#"<line x1="{}" y1="{}" x2="{}" y2="{}"/>"#,
                    n(f.cx),
                    n(f.cy),
                    n(f.x(p.x)),
                    n(f.y(p.y))
                );
            }
            let _ = writeln!(out, "</g>");
        }
        Overlay::Interaction { .. } => {}
    }
}

/// Fitted values against residuals with a zero reference line.
pub fn render_residual_scatter(predictions: &[f64], residuals: &[f64], style: &SvgStyle) -> String {
    let mut out = String::new();
    let title = style
        .title
        .clone()
        .unwrap_or_else(|| "Predictions vs. residuals".to_string());
    header(&mut out, style, &title);
    let finite = |v: &[f64]| -> (f64, f64) {
        let (lo, hi) = v
            .iter()
            .filter(|x| x.is_finite())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| {
                (a.min(x), b.max(x))
            });
        if lo.is_finite() {
            (lo, hi)
        } else {
            (0.0, 1.0)
        }
    };
    let (xlo, xhi) = finite(predictions);
    let (rlo, rhi) = finite(residuals);
    let xpad = ((xhi - xlo) * 0.05).max(1e-9 * xhi.abs().max(1.0));
    let rmax = rlo.abs().max(rhi.abs());
    let rmax = if rmax > 0.0 { rmax * 1.1 } else { 1.0 };
    let (x0, x1) = (xlo - xpad, xhi + xpad);
    let m = style.margin;
    let px = |x: f64| m + (x - x0) / (x1 - x0) * (SIZE - 2.0 * m);
    let py = |r: f64| SIZE / 2.0 - r / rmax * (SIZE / 2.0 - m);

    let _ = writeln!(
        out,
        r##"<rect class="frame" x="{}" y="{}" width="{w}" height="{w}" fill="none" stroke="#888888"/>"##,
        n(m),
        n(m),
        w = n(SIZE - 2.0 * m)
    );
    let _ = writeln!(
        out,
        r##"<line class="zero-line" x1="{}" y1="400.00" x2="{}" y2="400.00" stroke="#cc0000" stroke-dasharray="6 4"/>"##,
        n(m),
        n(SIZE - m)
    );
    let ticks = [(x0, "start"), (x1, "end")];
    for (x, anchor) in ticks {
        let _ = writeln!(
            out,
            r#"<text class="tick" x="{}" y="{}" text-anchor="{anchor}">{}</text>"#,
            n(px(x)),
            n(SIZE - m + 18.0),
            n(x)
        );
    }
    for r in [rmax, -rmax] {
        let _ = writeln!(
            out,
            r#"<text class="tick" x="{}" y="{}" text-anchor="end">{}</text>"#,
            n(m - 6.0),
            n(py(r) + 4.0),
            n(r)
        );
    }
    let _ = writeln!(
        out,
        r#"<text class="axis-label" x="400" y="{}" text-anchor="middle">Prediction</text>"#,
        n(SIZE - m / 3.0)
    );
    let _ = writeln!(
        out,
        r#"<text class="axis-label" x="{x}" y="400" text-anchor="middle" transform="rotate(-90 {x} 400)">Residual</text>"#,
        x = n(m / 3.0)
    );
    let _ = writeln!(
        out,
        r#"<text class="plot-title" x="400" y="{}" text-anchor="middle">{}</text>"#,
        n(m / 2.0),
        escape(&title)
    );
    let _ = writeln!(
        out,
        r#"<g class="residuals" fill="{}" fill-opacity="0.7">"#,
        escape(&style.genotype_color)
    );
    for (x, r) in predictions.iter().zip(residuals) {
        if x.is_finite() && r.is_finite() {
            let _ = writeln!(
                out,
                r#"<circle cx="{}" cy="{}" r="3"/>"#,
                n(px(*x)),
                n(py(*r))
            );
        }
    }
    let _ = writeln!(out, "</g>");
    out.push_str("</svg>\n");
    out
}
