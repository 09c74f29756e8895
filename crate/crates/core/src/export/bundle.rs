//! The `bundle.json` document: every analysis of one dataset plus a schema
//! version. Unknown top-level fields survive a read/write cycle.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::ammi::AmmiFit;
use crate::biplot::BiplotGeometry;
use crate::data::DatasetSummary;
use crate::gge::GgeFit;
use crate::mixed::SignificanceTable;
use crate::stability::StabilityReport;

pub const BUNDLE_VERSION: &str = "gxestat-bundle/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmmiSection {
    pub fit: AmmiFit,
    /// Symmetric-scaled point sets, one per plotted axis pair.
    pub biplots: Vec<BiplotGeometry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GgeSection {
    /// Fit at the symmetric partition.
    pub fit: GgeFit,
    /// One geometry per mode, each at its own default partition.
    pub biplots: Vec<BiplotGeometry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisBundle {
    pub version: String,
    pub dataset_summary: DatasetSummary,
    #[serde(default)]
    pub significance: Vec<SignificanceTable>,
    #[serde(default)]
    pub stability: Option<StabilityReport>,
    #[serde(default)]
    pub ammi: Option<AmmiSection>,
    #[serde(default)]
    pub gge: Option<GgeSection>,
    /// Fields written by newer versions, kept verbatim.
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl AnalysisBundle {
    pub fn new(dataset_summary: DatasetSummary) -> Self {
        Self {
            version: BUNDLE_VERSION.to_string(),
            dataset_summary,
            significance: Vec::new(),
            stability: None,
            ammi: None,
            gge: None,
            extra: Map::new(),
        }
    }

    /// Pretty JSON with a trailing newline.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("bundle serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, BundleError> {
        let value: Value = serde_json::from_str(text).map_err(|e| BundleError::Io {
            path: None,
            offset: Some(byte_offset(text, e.line(), e.column())),
            message: e.to_string(),
        })?;
        match value.get("version").and_then(Value::as_str) {
            Some(BUNDLE_VERSION) => {}
            found => {
                return Err(BundleError::SchemaVersionMismatch {
                    expected: BUNDLE_VERSION.to_string(),
                    found: found.map(str::to_string),
                })
            }
        }
        serde_json::from_value(value).map_err(|e| BundleError::Invalid(e.to_string()))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BundleError {
    #[error("{}{}: {message}", path.as_ref().map(|p| format!("{}: ", p.display())).unwrap_or_default(), offset.map(|o| format!("byte {o}")).unwrap_or_else(|| "I/O error".into()))]
    Io {
        path: Option<PathBuf>,
        /// Position of a parse failure in the file.
        offset: Option<usize>,
        message: String,
    },
    #[error("bundle schema {found:?} is not the supported {expected:?}")]
    SchemaVersionMismatch {
        expected: String,
        found: Option<String>,
    },
    #[error("bundle does not match the schema: {0}")]
    Invalid(String),
}

/// serde_json reports 1-based line and column; column 0 means end of line.
fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let mut offset = 0;
    for (i, l) in text.split_inclusive('\n').enumerate() {
        if i + 1 == line {
            return (offset + column).min(text.len());
        }
        offset += l.len();
    }
    text.len()
}

pub fn write_bundle(bundle: &AnalysisBundle, path: &Path) -> Result<(), BundleError> {
    std::fs::write(path, bundle.to_json()).map_err(|e| BundleError::Io {
        path: Some(path.to_path_buf()),
        offset: None,
        message: e.to_string(),
    })
}

pub fn read_bundle(path: &Path) -> Result<AnalysisBundle, BundleError> {
    let text = std::fs::read_to_string(path).map_err(|e| BundleError::Io {
        path: Some(path.to_path_buf()),
        offset: None,
        message: e.to_string(),
    })?;
    AnalysisBundle::from_json(&text).map_err(|e| match e {
        BundleError::Io {
            offset, message, ..
        } => BundleError::Io {
            path: Some(path.to_path_buf()),
            offset,
            message,
        },
        other => other,
    })
}
