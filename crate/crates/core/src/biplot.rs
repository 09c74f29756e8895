//! Biplot geometry shared by the AMMI and GGE analyses, the SVG renderer and
//! the JSON bundle. Everything a viewer needs is precomputed here; overlays
//! are derivable from the points and the mean-environment axis alone.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiplotModel {
    Ammi,
    Gge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiplotMode {
    PcScatter,
    MeanVsStability,
    RankingGenotypes,
    RankingEnvironments,
    WhichWonWhere,
    DiscrimVsRepr,
    EnvRelationship,
}

impl BiplotMode {
    pub const ALL: [BiplotMode; 7] = [
        BiplotMode::PcScatter,
        BiplotMode::MeanVsStability,
        BiplotMode::RankingGenotypes,
        BiplotMode::RankingEnvironments,
        BiplotMode::WhichWonWhere,
        BiplotMode::DiscrimVsRepr,
        BiplotMode::EnvRelationship,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BiplotMode::PcScatter => "pc_scatter",
            BiplotMode::MeanVsStability => "mean_vs_stability",
            BiplotMode::RankingGenotypes => "ranking_genotypes",
            BiplotMode::RankingEnvironments => "ranking_environments",
            BiplotMode::WhichWonWhere => "which_won_where",
            BiplotMode::DiscrimVsRepr => "discrim_vs_repr",
            BiplotMode::EnvRelationship => "env_relationship",
        }
    }

    pub fn parse(s: &str) -> Option<BiplotMode> {
        BiplotMode::ALL.into_iter().find(|m| m.name() == s)
    }

    /// Singular-value partition used when the caller gives none.
    pub fn default_svp(self) -> f64 {
        match self {
            BiplotMode::PcScatter | BiplotMode::WhichWonWhere => 0.5,
            BiplotMode::DiscrimVsRepr
            | BiplotMode::EnvRelationship
            | BiplotMode::RankingEnvironments => 0.0,
            BiplotMode::MeanVsStability | BiplotMode::RankingGenotypes => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointKind {
    Genotype,
    Environment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiplotPoint {
    pub label: String,
    pub kind: PointKind,
    pub x: f64,
    pub y: f64,
    /// Third coordinate for three-axis AMMI plots.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z: Option<f64>,
}

/// One plotted axis: component index (0-based) and its share of the
/// decomposed sum of squares, in percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisInfo {
    pub component: usize,
    pub explained_percent: f64,
}

/// Mean-environment axis: unit direction plus the average environment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanAxis {
    pub direction: [f64; 2],
    pub mean_point: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sector {
    /// Hull vertex owning the sector.
    pub winner: String,
    /// Bounding rays as angles in degrees, counter-clockwise from `start`.
    pub start_angle: f64,
    pub end_angle: f64,
    pub environments: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Winner {
    pub environment: String,
    pub genotype: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinnerAssignment {
    pub winners: Vec<Winner>,
    pub sectors: Vec<Sector>,
}

impl WinnerAssignment {
    pub fn winner_of(&self, environment: &str) -> Option<&str> {
        self.winners
            .iter()
            .find(|w| w.environment == environment)
            .map(|w| w.genotype.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisProjection {
    pub label: String,
    /// Signed coordinate along the mean-environment axis.
    pub projection: f64,
    /// Unsigned distance from the axis.
    pub distance: f64,
    /// Foot of the perpendicular on the axis.
    pub foot: [f64; 2],
    pub mean_rank: usize,
    pub stability_rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub label: String,
    pub distance: f64,
    pub projection: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentVector {
    pub label: String,
    pub length: f64,
    /// Angle to the mean-environment axis in degrees, in [0, 180].
    pub angle_to_axis: f64,
    pub representative: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairAngle {
    pub a: String,
    pub b: String,
    pub angle: f64,
    pub cosine: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionSign {
    pub genotype: String,
    pub environment: String,
    /// Sum over plotted axes of genotype × environment score products.
    pub product: f64,
    pub positive: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Overlay {
    None,
    Hull {
        /// Hull vertices counter-clockwise, as genotype labels.
        vertices: Vec<String>,
        polygon: Vec<[f64; 2]>,
        /// Unit directions of the sector boundaries.
        rays: Vec<[f64; 2]>,
        assignment: WinnerAssignment,
    },
    Droplines {
        entries: Vec<AxisProjection>,
    },
    Circles {
        center: [f64; 2],
        radii: Vec<f64>,
        ranking: Vec<RankedEntry>,
    },
    Vectors {
        environments: Vec<EnvironmentVector>,
    },
    Angles {
        pairs: Vec<PairAngle>,
    },
    Interaction {
        pairs: Vec<InteractionSign>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiplotGeometry {
    pub model: BiplotModel,
    pub mode: BiplotMode,
    pub svp: f64,
    pub axes: Vec<AxisInfo>,
    pub points: Vec<BiplotPoint>,
    pub mean_axis: Option<MeanAxis>,
    pub overlay: Overlay,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl BiplotGeometry {
    pub fn genotypes(&self) -> impl Iterator<Item = &BiplotPoint> {
        self.points.iter().filter(|p| p.kind == PointKind::Genotype)
    }

    pub fn environments(&self) -> impl Iterator<Item = &BiplotPoint> {
        self.points
            .iter()
            .filter(|p| p.kind == PointKind::Environment)
    }

    pub fn winners(&self) -> Option<&WinnerAssignment> {
        match &self.overlay {
            Overlay::Hull { assignment, .. } => Some(assignment),
            _ => None,
        }
    }
}
