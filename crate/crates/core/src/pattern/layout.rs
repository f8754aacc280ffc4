use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sequence::{generate_msequence, BitSequence, LfsrSpec};

/// Residue (mod 3) of the rows and columns that carry code bits.
pub const CODE_RESIDUE: usize = 2;
/// Residue (mod 3), on both axes, of the dot removed from every 3x3 block.
pub const FORCED_ABSENT_RESIDUE: usize = 0;

fn default_period() -> f64 {
    1.0
}

fn default_dot_ratio() -> f64 {
    0.5
}

/// Solid axis-aligned rectangle in layout coordinates (periods), painted
/// before the dots.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolidRect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
    pub value: f64,
}

impl SolidRect {
    /// Square of half-width `half` centered on `(cx, cy)`.
    pub fn square(cx: f64, cy: f64, half: f64, value: f64) -> Self {
        Self {
            x0: cx - half,
            y0: cy - half,
            x1: cx + half,
            y1: cy + half,
            value,
        }
    }

    /// Signed distance from `(x, y)` to the rectangle boundary, negative inside.
    pub fn signed_distance(&self, x: f64, y: f64) -> f64 {
        let dx = (self.x0 - x).max(x - self.x1);
        let dy = (self.y0 - y).max(y - self.y1);
        if dx <= 0.0 && dy <= 0.0 {
            dx.max(dy)
        } else {
            dx.max(0.0).hypot(dy.max(0.0))
        }
    }
}

/// Boolean dot lattice. Cell `(row, col)` has its dot center at layout
/// coordinates `(x, y) = (col, row)`, in periods.
#[derive(Debug, Clone, PartialEq)]
pub struct DotLayout {
    rows: usize,
    cols: usize,
    present: Vec<bool>,
    period: f64,
    dot_diameter_ratio: f64,
    solids: Vec<SolidRect>,
}

impl DotLayout {
    pub fn new(rows: usize, cols: usize, period: f64, dot_diameter_ratio: f64) -> Result<Self> {
        if !(dot_diameter_ratio > 0.0 && dot_diameter_ratio < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "dot diameter ratio {dot_diameter_ratio} outside (0, 1)"
            )));
        }
        if !(period > 0.0 && period.is_finite()) {
            return Err(Error::InvalidArgument(format!("period {period} must be > 0")));
        }
        Ok(Self {
            rows,
            cols,
            present: vec![true; rows * cols],
            period,
            dot_diameter_ratio,
            solids: Vec::new(),
        })
    }

    /// Layout with no dots at all.
    pub fn empty(rows: usize, cols: usize) -> Self {
        let mut l = Self::new(rows, cols, 1.0, 0.5).expect("valid defaults");
        l.present.fill(false);
        l
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn dot_diameter_ratio(&self) -> f64 {
        self.dot_diameter_ratio
    }

    pub fn solids(&self) -> &[SolidRect] {
        &self.solids
    }

    #[inline]
    pub fn is_present(&self, row: usize, col: usize) -> bool {
        self.present[row * self.cols + col]
    }

    #[inline]
    pub fn set_present(&mut self, row: usize, col: usize, v: bool) {
        self.present[row * self.cols + col] = v;
    }

    pub fn present_count(&self) -> usize {
        self.present.iter().filter(|&&p| p).count()
    }

    pub fn push_solid(&mut self, rect: SolidRect) {
        self.solids.push(rect);
    }

    /// Center of the lattice in layout coordinates.
    pub fn center(&self) -> (f64, f64) {
        (
            (self.cols as f64 - 1.0) / 2.0,
            (self.rows as f64 - 1.0) / 2.0,
        )
    }

    /// Layout rotated by `quarters` quarter turns (same convention as
    /// [`crate::image::ImageGray::rotate_quarter`]). Solids are dropped.
    pub fn rotated(&self, quarters: usize) -> DotLayout {
        let mut cur = self.clone();
        cur.solids.clear();
        for _ in 0..quarters % 4 {
            let (r, c) = (cur.rows, cur.cols);
            let mut next = DotLayout {
                rows: c,
                cols: r,
                present: vec![false; r * c],
                ..cur.clone()
            };
            for y in 0..c {
                for x in 0..r {
                    next.present[y * r + x] = cur.is_present(r - 1 - x, y);
                }
            }
            cur = next;
        }
        cur
    }
}

/// Large encoded pattern made of two m-sequences, one per axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MegarenaSpec {
    pub n: u32,
    pub x_spec: LfsrSpec,
    pub y_spec: LfsrSpec,
    pub extent_codes: usize,
    #[serde(default = "default_period")]
    pub period: f64,
    #[serde(default = "default_dot_ratio")]
    pub dot_diameter_ratio: f64,
}

impl MegarenaSpec {
    /// Built-in polynomial on both axes; the y sequence starts from a
    /// different seed.
    pub fn with_defaults(n: u32, extent_codes: usize) -> Result<Self> {
        let x_spec = LfsrSpec::default_for(n)?;
        let y_spec = LfsrSpec {
            seed: (1 << n) - 1,
            ..x_spec.clone()
        };
        Ok(Self {
            n,
            x_spec,
            y_spec,
            extent_codes,
            period: default_period(),
            dot_diameter_ratio: default_dot_ratio(),
        })
    }

    /// Lattice cells per axis.
    pub fn cells(&self) -> usize {
        3 * self.extent_codes
    }

    pub fn sequences(&self) -> Result<(BitSequence, BitSequence)> {
        if self.x_spec.n != self.n || self.y_spec.n != self.n {
            return Err(Error::InvalidArgument(format!(
                "axis registers must have n={}",
                self.n
            )));
        }
        let x = generate_msequence(&self.x_spec)?;
        let y = generate_msequence(&self.y_spec)?;
        if self.extent_codes == 0 || self.extent_codes > x.len() {
            return Err(Error::ExtentTooLarge {
                extent: self.extent_codes,
                length: x.len(),
            });
        }
        Ok((x, y))
    }

    /// Minimum visible periods per axis for decoding.
    pub fn min_visible_periods(&self) -> usize {
        3 * (self.n as usize + 1)
    }
}

/// Builds the Megarena lattice: coding columns `j = 3k + 2` lose all their
/// dots when `x[k] = 0`, coding rows `i = 3k + 2` likewise for `y[k]`, and
/// the dot at `(i, j) = (0, 0) mod 3` of every 3x3 block is always absent.
pub fn layout_megarena(spec: &MegarenaSpec) -> Result<DotLayout> {
    let (xs, ys) = spec.sequences()?;
    let cells = spec.cells();
    let mut layout = DotLayout::new(cells, cells, spec.period, spec.dot_diameter_ratio)?;
    for i in 0..cells {
        for j in 0..cells {
            let mut present = true;
            if j % 3 == CODE_RESIDUE && !xs.get(j / 3) {
                present = false;
            }
            if i % 3 == CODE_RESIDUE && !ys.get(i / 3) {
                present = false;
            }
            if i % 3 == FORCED_ABSENT_RESIDUE && j % 3 == FORCED_ABSENT_RESIDUE {
                present = false;
            }
            layout.set_present(i, j, present);
        }
    }
    Ok(layout)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SmallMarkerKind {
    Hp,
    Stamp,
}

/// Cell geometry shared by the small-marker layouts and their decoder.
///
/// Both designs place an asymmetric 3x3 glyph in the bottom-right corner of
/// the dot zone and reserve part of the bottom dot row for the marker id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SmallMarkerGeometry {
    pub kind: SmallMarkerKind,
    pub periods_across: usize,
    /// Border width in periods (zero for HP codes).
    pub border: usize,
}

/// Absent cells of the glyph, relative to its top-left cell.
pub const GLYPH_ABSENT: [(usize, usize); 3] = [(0, 0), (0, 2), (2, 0)];
const MAX_ID_BITS: usize = 16;
/// Side of the finder-pattern cell block.
pub const FINDER_CELLS: usize = 4;

impl SmallMarkerGeometry {
    pub fn hp(periods_across: usize) -> Self {
        Self {
            kind: SmallMarkerKind::Hp,
            periods_across,
            border: 0,
        }
    }

    pub fn stamp(periods_across: usize, border: usize) -> Self {
        Self {
            kind: SmallMarkerKind::Stamp,
            periods_across,
            border,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.periods_across;
        match self.kind {
            SmallMarkerKind::Hp if n < 9 => Err(Error::InvalidArgument(format!(
                "HP code needs at least 9 periods across, got {n}"
            ))),
            SmallMarkerKind::Stamp if n < 9 => Err(Error::InvalidArgument(format!(
                "stamp needs at least 9 periods across, got {n}"
            ))),
            SmallMarkerKind::Stamp if self.border == 0 || n < 2 * self.border + 7 => {
                Err(Error::InvalidArgument(format!(
                    "border of {} periods leaves no room for the dot zone in {n} periods",
                    self.border
                )))
            }
            _ => Ok(()),
        }
    }

    /// Top-left cell of the glyph block.
    pub fn glyph_origin(&self) -> (usize, usize) {
        let last = self.periods_across - self.border;
        (last - 3, last - 3)
    }

    /// Glyph cells with their expected presence.
    pub fn glyph_cells(&self) -> Vec<((usize, usize), bool)> {
        let (r0, c0) = self.glyph_origin();
        (0..3)
            .flat_map(|r| (0..3).map(move |c| (r, c)))
            .map(|(r, c)| ((r0 + r, c0 + c), !GLYPH_ABSENT.contains(&(r, c))))
            .collect()
    }

    /// Reserved id cells, most significant bit first.
    pub fn id_cells(&self) -> Vec<(usize, usize)> {
        let n = self.periods_across;
        let row = n - self.border - 1;
        let (start, end) = match self.kind {
            SmallMarkerKind::Hp => (FINDER_CELLS, n - 3),
            SmallMarkerKind::Stamp => (self.border, n - self.border - 3),
        };
        (start..end).take(MAX_ID_BITS).map(|c| (row, c)).collect()
    }

    pub fn id_capacity(&self) -> usize {
        self.id_cells().len()
    }

    /// Whether a cell can hold a dot at all (outside finders and border).
    pub fn is_dot_cell(&self, row: usize, col: usize) -> bool {
        let n = self.periods_across;
        if row >= n || col >= n {
            return false;
        }
        match self.kind {
            SmallMarkerKind::Hp => {
                let near_top = row < FINDER_CELLS;
                let near_left = col < FINDER_CELLS;
                let near_bottom = row >= n - FINDER_CELLS;
                let near_right = col >= n - FINDER_CELLS;
                !((near_top && near_left) || (near_top && near_right) || (near_bottom && near_left))
            }
            SmallMarkerKind::Stamp => {
                let b = self.border;
                (b..n - b).contains(&row) && (b..n - b).contains(&col)
            }
        }
    }

    /// Finder-pattern centers in layout coordinates: origin (top-left),
    /// top-right, bottom-left.
    pub fn finder_centers(&self) -> [(f64, f64); 3] {
        let lo = (FINDER_CELLS as f64 - 1.0) / 2.0;
        let hi = self.periods_across as f64 - 1.0 - lo;
        [(lo, lo), (hi, lo), (lo, hi)]
    }

    /// Region corners in layout coordinates, clockwise from the origin
    /// corner: finder centers (plus the completed fourth) for HP codes, outer
    /// border corners for stamps.
    pub fn region_corners(&self) -> [(f64, f64); 4] {
        let (lo, hi) = match self.kind {
            SmallMarkerKind::Hp => {
                let lo = (FINDER_CELLS as f64 - 1.0) / 2.0;
                (lo, self.periods_across as f64 - 1.0 - lo)
            }
            SmallMarkerKind::Stamp => (-0.5, self.periods_across as f64 - 0.5),
        };
        [(lo, lo), (hi, lo), (hi, hi), (lo, hi)]
    }

    /// Marker center in layout coordinates.
    pub fn center(&self) -> (f64, f64) {
        let c = (self.periods_across as f64 - 1.0) / 2.0;
        (c, c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HpCodeSpec {
    pub periods_across: usize,
    #[serde(default)]
    pub marker_id: u32,
    #[serde(default = "default_period")]
    pub period: f64,
    #[serde(default = "default_dot_ratio")]
    pub dot_diameter_ratio: f64,
}

impl HpCodeSpec {
    pub fn new(periods_across: usize, marker_id: u32) -> Self {
        Self {
            periods_across,
            marker_id,
            period: default_period(),
            dot_diameter_ratio: default_dot_ratio(),
        }
    }

    pub fn geometry(&self) -> SmallMarkerGeometry {
        SmallMarkerGeometry::hp(self.periods_across)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StampSpec {
    pub periods_across: usize,
    #[serde(default = "default_border")]
    pub border_thickness: usize,
    #[serde(default)]
    pub marker_id: u32,
    #[serde(default = "default_period")]
    pub period: f64,
    #[serde(default = "default_dot_ratio")]
    pub dot_diameter_ratio: f64,
}

fn default_border() -> usize {
    1
}

impl StampSpec {
    pub fn new(periods_across: usize, border_thickness: usize, marker_id: u32) -> Self {
        Self {
            periods_across,
            border_thickness,
            marker_id,
            period: default_period(),
            dot_diameter_ratio: default_dot_ratio(),
        }
    }

    pub fn geometry(&self) -> SmallMarkerGeometry {
        SmallMarkerGeometry::stamp(self.periods_across, self.border_thickness)
    }
}

fn small_marker_layout(
    geom: &SmallMarkerGeometry,
    marker_id: u32,
    period: f64,
    ratio: f64,
) -> Result<DotLayout> {
    geom.validate()?;
    let capacity = geom.id_capacity();
    if capacity < 32 && marker_id >> capacity != 0 {
        return Err(Error::IdOverflow {
            id: marker_id,
            capacity,
        });
    }
    let n = geom.periods_across;
    let mut layout = DotLayout::new(n, n, period, ratio)?;
    for r in 0..n {
        for c in 0..n {
            layout.set_present(r, c, geom.is_dot_cell(r, c));
        }
    }
    for ((r, c), present) in geom.glyph_cells() {
        layout.set_present(r, c, present);
    }
    for (k, &(r, c)) in geom.id_cells().iter().enumerate() {
        let bit = (marker_id >> (capacity - 1 - k)) & 1;
        layout.set_present(r, c, bit == 0);
    }
    Ok(layout)
}

/// QR-style marker: three corner finder squares (rings of 7, 5 and 3 half
/// periods, i.e. a 1:1:3:1:1 cross-section) around a periodic dot field.
pub fn layout_hpcode(spec: &HpCodeSpec) -> Result<(DotLayout, SmallMarkerGeometry)> {
    let geom = spec.geometry();
    let mut layout =
        small_marker_layout(&geom, spec.marker_id, spec.period, spec.dot_diameter_ratio)?;
    for (cx, cy) in geom.finder_centers() {
        layout.push_solid(SolidRect::square(cx, cy, 1.75, 1.0));
        layout.push_solid(SolidRect::square(cx, cy, 1.25, 0.0));
        layout.push_solid(SolidRect::square(cx, cy, 0.75, 1.0));
    }
    Ok((layout, geom))
}

/// Marker framed by a solid square border `border_thickness` periods wide.
pub fn layout_stamp(spec: &StampSpec) -> Result<(DotLayout, SmallMarkerGeometry)> {
    let geom = spec.geometry();
    let mut layout =
        small_marker_layout(&geom, spec.marker_id, spec.period, spec.dot_diameter_ratio)?;
    let n = spec.periods_across as f64;
    let b = spec.border_thickness as f64;
    layout.push_solid(SolidRect {
        x0: -0.5,
        y0: -0.5,
        x1: n - 0.5,
        y1: n - 0.5,
        value: 1.0,
    });
    layout.push_solid(SolidRect {
        x0: b - 0.5,
        y0: b - 0.5,
        x1: n - b - 0.5,
        y1: n - b - 0.5,
        value: 0.0,
    });
    Ok((layout, geom))
}

/// Reads the id bits of a presence grid indexed in marker cells.
pub fn read_marker_id(geom: &SmallMarkerGeometry, present: impl Fn(usize, usize) -> bool) -> u32 {
    geom.id_cells()
        .iter()
        .fold(0, |id, &(r, c)| (id << 1) | (!present(r, c)) as u32)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn megarena_coding_columns_follow_sequence() {
        let spec = MegarenaSpec::with_defaults(4, 5).unwrap();
        let (xs, ys) = spec.sequences().unwrap();
        assert_eq!(&xs.to_string()[..5], "00010");
        let layout = layout_megarena(&spec).unwrap();
        assert_eq!((layout.rows(), layout.cols()), (15, 15));
        // row 1 is neither a coding row nor a forced-absence row
        for (k, col) in [2usize, 5, 8, 11].into_iter().enumerate() {
            assert_eq!(layout.is_present(1, col), xs.get(k), "column {col}");
        }
        assert!(!layout.is_present(1, 2) && !layout.is_present(1, 5) && !layout.is_present(1, 8));
        assert!(layout.is_present(1, 11));
        for i in 0..15 {
            for j in 0..15 {
                let expect = (j % 3 != 2 || xs.get(j / 3))
                    && (i % 3 != 2 || ys.get(i / 3))
                    && !(i % 3 == 0 && j % 3 == 0);
                assert_eq!(layout.is_present(i, j), expect);
            }
        }
    }

    #[test]
    fn megarena_density_bound() {
        for n in [3, 5, 8] {
            let spec = MegarenaSpec::with_defaults(n, (1 << n) - 1).unwrap();
            let layout = layout_megarena(&spec).unwrap();
            let density = layout.present_count() as f64 / (layout.rows() * layout.cols()) as f64;
            assert!(density <= 8.0 / 9.0);
        }
    }

    #[test]
    fn megarena_extent_checked() {
        let spec = MegarenaSpec::with_defaults(4, 16).unwrap();
        assert!(matches!(
            layout_megarena(&spec),
            Err(Error::ExtentTooLarge { .. })
        ));
    }

    #[test]
    fn megarena_is_deterministic() {
        let spec = MegarenaSpec::with_defaults(6, 40).unwrap();
        assert_eq!(layout_megarena(&spec).unwrap(), layout_megarena(&spec).unwrap());
    }

    #[test]
    fn hp_zero_id_fills_reserved_zone() {
        let (layout, geom) = layout_hpcode(&HpCodeSpec::new(20, 0)).unwrap();
        assert!(geom.id_cells().iter().all(|&(r, c)| layout.is_present(r, c)));
        assert_eq!(layout.solids().len(), 9);
        let (layout, geom) = layout_hpcode(&HpCodeSpec::new(20, 0b1011)).unwrap();
        assert_eq!(read_marker_id(&geom, |r, c| layout.is_present(r, c)), 0b1011);
    }

    #[test]
    fn hp_id_capacity() {
        let geom = SmallMarkerGeometry::hp(9);
        assert_eq!(geom.id_capacity(), 2);
        assert!(matches!(
            layout_hpcode(&HpCodeSpec::new(9, 4)),
            Err(Error::IdOverflow { .. })
        ));
        assert!(layout_hpcode(&HpCodeSpec::new(8, 0)).is_err());
    }

    #[test]
    fn rotations_never_coincide() {
        let layouts = [
            layout_hpcode(&HpCodeSpec::new(17, 0)).unwrap().0,
            layout_hpcode(&HpCodeSpec::new(20, 77)).unwrap().0,
            layout_stamp(&StampSpec::new(20, 1, 0)).unwrap().0,
            layout_stamp(&StampSpec::new(12, 2, 3)).unwrap().0,
        ];
        for layout in layouts {
            let base = layout.rotated(0);
            for q in 1..4 {
                assert_ne!(layout.rotated(q), base, "rotation {q}");
            }
            assert_eq!(layout.rotated(4), base);
        }
    }

    #[test]
    fn stamp_interior_size() {
        let (layout, geom) = layout_stamp(&StampSpec::new(20, 1, 0)).unwrap();
        let interior: usize = (0..20)
            .map(|r| (0..20).filter(|&c| geom.is_dot_cell(r, c)).count())
            .sum();
        assert_eq!(interior, 18 * 18);
        assert_eq!(layout.present_count(), 18 * 18 - 3);
        assert_eq!(geom.id_capacity(), 15);
        let (layout, geom) = layout_stamp(&StampSpec::new(20, 1, 5)).unwrap();
        assert_eq!(read_marker_id(&geom, |r, c| layout.is_present(r, c)), 5);
    }

    #[test]
    fn signed_distance_to_rect() {
        let r = SolidRect::square(0.0, 0.0, 1.0, 1.0);
        assert_eq!(r.signed_distance(0.0, 0.0), -1.0);
        assert_eq!(r.signed_distance(2.0, 0.0), 1.0);
        assert!((r.signed_distance(2.0, 2.0) - 2f64.sqrt()).abs() < 1e-12);
    }
}
