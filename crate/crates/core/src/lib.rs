//! Genotype × environment analysis of multi-environment trials: mixed-model
//! significance tests, single-genotype stability statistics, AMMI and GGE
//! biplots, and SVG/JSON export.

pub mod ammi;
pub mod biplot;
pub mod data;
pub mod export;
pub mod gge;
pub mod mixed;
pub mod numerics;
pub mod pipeline;
pub mod stability;
mod text;

/// Any failure of the analysis pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Data(#[from] data::DataError),
    #[error(transparent)]
    Model(#[from] mixed::ModelError),
    #[error(transparent)]
    Stability(#[from] stability::StabilityError),
    #[error(transparent)]
    Ammi(#[from] ammi::AmmiError),
    #[error(transparent)]
    Gge(#[from] gge::GgeError),
    #[error(transparent)]
    Bundle(#[from] export::BundleError),
}

/// Wrapper variants that only forward another module's error.
const WRAPPERS: [&str; 2] = ["Data", "Numerics"];

/// First variant name in a derived `Debug` string that is not a wrapper.
fn variant_name(debug: &str) -> String {
    let mut rest = debug;
    loop {
        let name: String = rest
            .chars()
            .take_while(|c| c.is_alphanumeric() || *c == '_')
            .collect();
        let after = &rest[name.len()..];
        if WRAPPERS.contains(&name.as_str()) && after.starts_with('(') {
            rest = &after[1..];
            continue;
        }
        return name;
    }
}

impl Error {
    /// Name of the innermost meaningful error variant, e.g.
    /// `IncompleteTable` or `DegenerateHull`.
    pub fn kind(&self) -> String {
        let inner = match self {
            Error::Data(e) => format!("{e:?}"),
            Error::Model(e) => format!("{e:?}"),
            Error::Stability(e) => format!("{e:?}"),
            Error::Ammi(e) => format!("{e:?}"),
            Error::Gge(e) => format!("{e:?}"),
            Error::Bundle(e) => format!("{e:?}"),
        };
        variant_name(&inner)
    }

    /// Module that raised the error.
    pub fn module(&self) -> &'static str {
        match self {
            Error::Data(_) => "data",
            Error::Model(_) => "mixed",
            Error::Stability(_) => "stability",
            Error::Ammi(_) => "ammi",
            Error::Gge(_) => "gge",
            Error::Bundle(_) => "export",
        }
    }
}
