use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::pattern::layout::DotLayout;

/// Fixed-point rendering with trailing zeros removed; stable across runs.
fn num(v: f64) -> String {
    let s = format!("{v:.9}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".to_string()
    } else {
        s.to_string()
    }
}

/// SVG 1.1 document of the layout in millimeters (the layout period is
/// taken as millimeters). Solids become `rect` elements, each present dot
/// one `circle`.
pub fn layout_to_svg(layout: &DotLayout) -> String {
    let p = layout.period();
    let w = layout.cols() as f64 * p;
    let h = layout.rows() as f64 * p;
    let mut out = String::new();
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{}mm\" height=\"{}mm\" viewBox=\"0 0 {} {}\">",
        num(w),
        num(h),
        num(w),
        num(h)
    );
    let _ = writeln!(
        out,
        "  <rect x=\"0\" y=\"0\" width=\"{}\" height=\"{}\" fill=\"black\"/>",
        num(w),
        num(h)
    );
    // layout coordinate x maps to (x + 0.5) * period in the document
    for s in layout.solids() {
        let fill = if s.value >= 0.5 { "white" } else { "black" };
        let _ = writeln!(
            out,
            "  <rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{fill}\"/>",
            num((s.x0 + 0.5) * p),
            num((s.y0 + 0.5) * p),
            num((s.x1 - s.x0) * p),
            num((s.y1 - s.y0) * p)
        );
    }
    let r = num(0.5 * layout.dot_diameter_ratio() * p);
    for row in 0..layout.rows() {
        for col in 0..layout.cols() {
            if layout.is_present(row, col) {
                let _ = writeln!(
                    out,
                    "  <circle cx=\"{}\" cy=\"{}\" r=\"{r}\" fill=\"white\"/>",
                    num((col as f64 + 0.5) * p),
                    num((row as f64 + 0.5) * p)
                );
            }
        }
    }
    out.push_str("</svg>\n");
    out
}

pub fn export_svg(layout: &DotLayout, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, layout_to_svg(layout)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pattern::layout::{layout_hpcode, HpCodeSpec};

    #[test]
    fn one_circle_per_present_dot() {
        let (layout, _) = layout_hpcode(&HpCodeSpec::new(20, 9)).unwrap();
        let svg = layout_to_svg(&layout);
        assert_eq!(svg.matches("<circle").count(), layout.present_count());
        assert_eq!(svg.matches("<rect").count(), 1 + layout.solids().len());
    }

    #[test]
    fn document_size_in_millimeters() {
        let mut layout = DotLayout::new(30, 30, 0.01, 0.5).unwrap();
        layout.set_present(0, 0, false);
        let svg = layout_to_svg(&layout);
        assert!(svg.contains("width=\"0.3mm\""), "{}", &svg[..200]);
        assert!(svg.contains("height=\"0.3mm\""));
    }

    #[test]
    fn empty_layout_is_valid_svg() {
        let svg = layout_to_svg(&DotLayout::empty(4, 4));
        assert_eq!(svg.matches("<circle").count(), 0);
        assert!(svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn unwritable_path() {
        let layout = DotLayout::empty(1, 1);
        assert!(export_svg(&layout, "/nonexistent-dir/a.svg").is_err());
    }
}
