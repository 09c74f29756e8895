//! SVG rendering and the JSON analysis bundle.

mod bundle;
mod svg;

pub use bundle::{
    read_bundle, write_bundle, AmmiSection, AnalysisBundle, BundleError, GgeSection, BUNDLE_VERSION,
};
pub use svg::{render_residual_scatter, render_svg, SvgStyle};
