//! Marker layouts (Megarena, HP code, Stamp), synthetic rendering and SVG
//! export. The renderer is the ground truth every round-trip test checks
//! the estimators against.

mod layout;
mod render;
mod svg;

pub use layout::{
    layout_hpcode, layout_megarena, layout_stamp, read_marker_id, DotLayout, HpCodeSpec,
    MegarenaSpec, SmallMarkerGeometry, SmallMarkerKind, SolidRect, StampSpec, CODE_RESIDUE,
    FINDER_CELLS, FORCED_ABSENT_RESIDUE, GLYPH_ABSENT,
};
pub use render::{render, render_into, render_layout_image, RenderPose};
pub use svg::{export_svg, layout_to_svg};
