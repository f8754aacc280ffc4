//! Absolute decoding of Megarena views.
//!
//! Lattice nodes are indexed by `(u, v)`: node `(u, v)` is the pixel where
//! `plane1 = 2 pi u` and `plane2 = 2 pi v`. Everything up to
//! [`extract_code`] works in this grid frame; [`resolve_absolute`] finds which
//! of the four quarter-turn hypotheses maps it onto the pattern.

use std::collections::VecDeque;
use std::f64::consts::PI;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageGray;
use crate::pattern::{MegarenaSpec, CODE_RESIDUE, FORCED_ABSENT_RESIDUE};
use crate::phase::{analyze, elapsed_ms, AnalysisConfig, PhasePlane, PhaseResult, StageTimings};
use crate::sequence::{build_window_index, WindowIndex};

/// Half-width of the classification window, in cells (9x9 window).
const WINDOW_RADIUS: i64 = 4;
/// Minimum cluster separation for a window to set its own threshold.
const MIN_SPREAD: f64 = 0.05;
/// Fraction of the frame-wide cluster separation a window must reach.
const MIN_RELATIVE_SPREAD: f64 = 0.25;
const BIT_MAJORITY: f64 = 0.7;
const RESIDUE_TIE: f64 = 0.05;
/// Margin below which a classification is not counted as confident.
const CONFIDENT_MARGIN: f64 = 0.2;
/// Slack when counting the periods spanned by the frame.
const PERIOD_COUNT_EPS: f64 = 0.05;

/// Intensities sampled at the predicted dot centers.
#[derive(Debug, Clone)]
pub struct DotSampleGrid {
    pub u0: i64,
    pub v0: i64,
    pub nu: usize,
    pub nv: usize,
    /// `None` for nodes closer than one period to the frame edge.
    pub values: Vec<Option<f64>>,
    pub centers: Vec<(f64, f64)>,
    /// Lattice periods spanned by the frame along each phase axis.
    pub visible_periods: (usize, usize),
}

impl DotSampleGrid {
    #[inline]
    fn index(&self, u: i64, v: i64) -> Option<usize> {
        let (du, dv) = (u - self.u0, v - self.v0);
        if du < 0 || dv < 0 || du >= self.nu as i64 || dv >= self.nv as i64 {
            None
        } else {
            Some(dv as usize * self.nu + du as usize)
        }
    }

    pub fn get(&self, u: i64, v: i64) -> Option<f64> {
        self.index(u, v).and_then(|i| self.values[i])
    }

    pub fn center(&self, u: i64, v: i64) -> Option<(f64, f64)> {
        self.index(u, v).map(|i| self.centers[i])
    }

    pub fn sampled(&self) -> usize {
        self.values.iter().filter(|v| v.is_some()).count()
    }
}

/// Per-node presence decision.
#[derive(Debug, Clone)]
pub struct DotClasses {
    pub u0: i64,
    pub v0: i64,
    pub nu: usize,
    pub nv: usize,
    pub present: Vec<Option<bool>>,
    pub threshold: Vec<f64>,
    /// `|intensity - threshold| / cluster separation`.
    pub margin: Vec<f64>,
}

impl DotClasses {
    pub fn get(&self, u: i64, v: i64) -> Option<bool> {
        let (du, dv) = (u - self.u0, v - self.v0);
        if du < 0 || dv < 0 || du >= self.nu as i64 || dv >= self.nv as i64 {
            None
        } else {
            self.present[dv as usize * self.nu + du as usize]
        }
    }

    /// Fraction of classified nodes decided with a comfortable margin.
    pub fn confidence(&self) -> f64 {
        let (mut n, mut ok) = (0usize, 0usize);
        for (p, m) in self.present.iter().zip(&self.margin) {
            if p.is_some() {
                n += 1;
                if *m >= CONFIDENT_MARGIN {
                    ok += 1;
                }
            }
        }
        if n == 0 {
            0.0
        } else {
            ok as f64 / n as f64
        }
    }
}

/// Code bits read from the grid, before quadrant disambiguation. `x` refers
/// to lines of constant `u` (first phase axis), `y` to lines of constant `v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeWindows {
    /// Bit of each coding line `u = x_anchor_cell + 3k`, increasing `u`.
    pub x_bits: Vec<Option<bool>>,
    pub y_bits: Vec<Option<bool>>,
    pub x_anchor_cell: i64,
    pub y_anchor_cell: i64,
    /// Residues (mod 3) of `u` and `v` holding the coding lines.
    pub coding_residue: (usize, usize),
    /// Residues of the node that is absent in every 3x3 block.
    pub forced_residue: (usize, usize),
    /// Nodes left out of the vote because they sit next to a node that
    /// contradicts the fixed part of the layout.
    pub masked_cells: usize,
    pub confidence: f64,
}

/// Absolute in-plane pose of the image center on the pattern.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AbsolutePose2D {
    /// Physical units from the center of dot (0, 0); +x along pattern columns.
    pub x: f64,
    pub y: f64,
    /// Direction of the pattern x axis in the image, in `[0, 2 pi)`.
    pub theta: f64,
    pub confidence: f64,
    /// Code positions of the first visible coding column and row.
    pub code_x: usize,
    pub code_y: usize,
    /// Quarter turns (0..4) of the accepted hypothesis.
    pub quadrant: usize,
    /// Hypotheses that validated (1 for a clean decode).
    pub valid_hypotheses: usize,
}

#[inline]
fn modulo(a: i64, m: i64) -> usize {
    a.rem_euclid(m) as usize
}

fn span_periods(plane: &PhasePlane, w: usize, h: usize) -> (f64, f64) {
    let corners = [
        (-0.5, -0.5),
        (w as f64 - 0.5, -0.5),
        (-0.5, h as f64 - 0.5),
        (w as f64 - 0.5, h as f64 - 0.5),
    ];
    corners.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(x, y)| {
        let p = plane.eval(x, y) / (2.0 * PI);
        (lo.min(p), hi.max(p))
    })
}

/// Mean of a 3x3 bilinear stencil of +-0.1 period around `(x, y)`.
pub fn sample_node(img: &ImageGray, x: f64, y: f64, period_px: f64) -> f64 {
    let step = 0.1 * period_px;
    let mut acc = 0.0;
    for sy in [-step, 0.0, step] {
        for sx in [-step, 0.0, step] {
            acc += img.bilinear(x + sx, y + sy);
        }
    }
    acc / 9.0
}

/// Samples every lattice node lying at least one period inside the frame,
/// averaging a 3x3 bilinear stencil of +-0.1 period around the center.
/// `min_periods` is the number of periods the frame must span on both axes.
pub fn sample_dots(img: &ImageGray, phase: &PhaseResult, min_periods: usize) -> Result<DotSampleGrid> {
    let (w, h) = (img.width(), img.height());
    let (lo1, hi1) = span_periods(&phase.plane1, w, h);
    let (lo2, hi2) = span_periods(&phase.plane2, w, h);
    let visible = (
        (hi1 - lo1 + PERIOD_COUNT_EPS).floor() as usize,
        (hi2 - lo2 + PERIOD_COUNT_EPS).floor() as usize,
    );
    let seen = visible.0.min(visible.1);
    if seen < min_periods {
        return Err(Error::FewerThanMinimumCells {
            visible: seen,
            required: min_periods,
        });
    }

    let u0 = lo1.floor() as i64;
    let v0 = lo2.floor() as i64;
    let nu = (hi1.ceil() as i64 - u0 + 1) as usize;
    let nv = (hi2.ceil() as i64 - v0 + 1) as usize;
    let margin = phase.period_px;
    let (xmax, ymax) = (w as f64 - 1.0 - margin, h as f64 - 1.0 - margin);
    let mut values = vec![None; nu * nv];
    let mut centers = vec![(0.0, 0.0); nu * nv];
    for j in 0..nv {
        for i in 0..nu {
            let (x, y) = phase.node_position((u0 + i as i64) as f64, (v0 + j as i64) as f64);
            let k = j * nu + i;
            centers[k] = (x, y);
            if x < margin || y < margin || x > xmax || y > ymax {
                continue;
            }
            values[k] = Some(sample_node(img, x, y, phase.period_px));
        }
    }
    Ok(DotSampleGrid {
        u0,
        v0,
        nu,
        nv,
        values,
        centers,
        visible_periods: visible,
    })
}

/// Exact 1-D 2-means: cluster centers `(low, high)` of `values`.
fn two_means(values: &mut [f64]) -> (f64, f64) {
    values.sort_unstable_by(|a, b| a.total_cmp(b));
    let n = values.len();
    let total: f64 = values.iter().sum();
    let total_sq: f64 = values.iter().map(|v| v * v).sum();
    let (mut best, mut split) = (f64::INFINITY, 1);
    let (mut s, mut sq) = (0.0, 0.0);
    for k in 1..n {
        s += values[k - 1];
        sq += values[k - 1] * values[k - 1];
        let (n1, n2) = (k as f64, (n - k) as f64);
        let sse = (sq - s * s / n1) + ((total_sq - sq) - (total - s).powi(2) / n2);
        if sse < best {
            best = sse;
            split = k;
        }
    }
    let lo = values[..split].iter().sum::<f64>() / split as f64;
    let hi = values[split..].iter().sum::<f64>() / (n - split) as f64;
    (lo, hi)
}

/// Local adaptive threshold: midpoint of the two 2-means centers over the
/// surrounding 9x9 nodes. Windows without contrast borrow the threshold of
/// the nearest window that has it.
pub fn classify_dots(grid: &DotSampleGrid) -> Result<DotClasses> {
    let (nu, nv) = (grid.nu, grid.nv);
    let mut all: Vec<f64> = grid.values.iter().flatten().copied().collect();
    if all.len() < 2 {
        return Err(Error::DegenerateClustering);
    }
    let (glo, ghi) = two_means(&mut all);
    if ghi - glo < MIN_SPREAD {
        return Err(Error::DegenerateClustering);
    }
    let min_sep = MIN_SPREAD.max(MIN_RELATIVE_SPREAD * (ghi - glo));

    // (threshold, separation) for windows with enough contrast
    let mut local: Vec<Option<(f64, f64)>> = vec![None; nu * nv];
    let mut buf = Vec::with_capacity(81);
    for j in 0..nv as i64 {
        for i in 0..nu as i64 {
            let k = j as usize * nu + i as usize;
            if grid.values[k].is_none() {
                continue;
            }
            buf.clear();
            for dj in -WINDOW_RADIUS..=WINDOW_RADIUS {
                for di in -WINDOW_RADIUS..=WINDOW_RADIUS {
                    let (a, b) = (i + di, j + dj);
                    if a >= 0 && b >= 0 && (a as usize) < nu && (b as usize) < nv {
                        if let Some(v) = grid.values[b as usize * nu + a as usize] {
                            buf.push(v);
                        }
                    }
                }
            }
            if buf.len() < 2 {
                continue;
            }
            let (lo, hi) = two_means(&mut buf);
            if hi - lo >= min_sep {
                local[k] = Some((0.5 * (lo + hi), hi - lo));
            }
        }
    }

    // nearest (4-connected) valid window for the others
    let mut queue: VecDeque<usize> = (0..nu * nv).filter(|&k| local[k].is_some()).collect();
    if queue.is_empty() {
        return Err(Error::DegenerateClustering);
    }
    while let Some(k) = queue.pop_front() {
        let (i, j) = (k % nu, k / nu);
        let here = local[k];
        let mut visit = |n: usize| {
            if local[n].is_none() {
                local[n] = here;
                queue.push_back(n);
            }
        };
        if i > 0 {
            visit(k - 1);
        }
        if i + 1 < nu {
            visit(k + 1);
        }
        if j > 0 {
            visit(k - nu);
        }
        if j + 1 < nv {
            visit(k + nu);
        }
    }

    let mut present = vec![None; nu * nv];
    let mut threshold = vec![0.0; nu * nv];
    let mut margin = vec![0.0; nu * nv];
    for k in 0..nu * nv {
        let (thr, sep) = local[k].expect("filled by the search");
        threshold[k] = thr;
        if let Some(v) = grid.values[k] {
            present[k] = Some(v > thr);
            margin[k] = (v - thr).abs() / sep;
        }
    }
    Ok(DotClasses {
        u0: grid.u0,
        v0: grid.v0,
        nu,
        nv,
        present,
        threshold,
        margin,
    })
}

/// Locates the coding lines and reads one bit per visible line by majority
/// vote (bit 1 = dots present).
pub fn extract_code(classes: &DotClasses) -> Result<CodeWindows> {
    let (nu, nv) = (classes.nu, classes.nv);
    let uv = |k: usize| (classes.u0 + (k % nu) as i64, classes.v0 + (k / nu) as i64);

    // absent fraction per residue pair
    let mut absent = [[0usize; 3]; 3];
    let mut count = [[0usize; 3]; 3];
    for (k, p) in classes.present.iter().enumerate() {
        if let Some(p) = p {
            let (u, v) = uv(k);
            let (ru, rv) = (modulo(u, 3), modulo(v, 3));
            count[ru][rv] += 1;
            absent[ru][rv] += usize::from(!p);
        }
    }
    let frac = |ru: usize, rv: usize| {
        if count[ru][rv] == 0 {
            0.5
        } else {
            absent[ru][rv] as f64 / count[ru][rv] as f64
        }
    };

    // Off the coding lines, one residue pair is always absent and the other
    // three always present; score each choice of coding residues by how far
    // the observed fractions are from that.
    let mut scored: Vec<(f64, (usize, usize), (usize, usize))> = Vec::with_capacity(9);
    for cu in 0..3 {
        for cv in 0..3 {
            let free: Vec<(usize, usize)> = (0..3)
                .filter(|&r| r != cu)
                .flat_map(|ru| (0..3).filter(move |&r| r != cv).map(move |rv| (ru, rv)))
                .collect();
            let forced = *free
                .iter()
                .max_by(|a, b| frac(a.0, a.1).total_cmp(&frac(b.0, b.1)))
                .expect("four free pairs");
            let score = free
                .iter()
                .map(|&(ru, rv)| {
                    if (ru, rv) == forced {
                        1.0 - frac(ru, rv)
                    } else {
                        frac(ru, rv)
                    }
                })
                .sum::<f64>();
            scored.push((score, (cu, cv), forced));
        }
    }
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    if scored[1].0 - scored[0].0 < RESIDUE_TIE {
        return Err(Error::AmbiguousCodingPhase);
    }
    let (_, (cu, cv), (fu, fv)) = scored[0];

    // nodes that contradict the fixed part of the layout, dilated by one
    let mut masked = vec![false; nu * nv];
    for (k, p) in classes.present.iter().enumerate() {
        let Some(p) = *p else { continue };
        let (u, v) = uv(k);
        let (ru, rv) = (modulo(u, 3), modulo(v, 3));
        if ru == cu || rv == cv {
            continue;
        }
        let expect_present = (ru, rv) != (fu, fv);
        if p != expect_present {
            let (i, j) = ((k % nu) as i64, (k / nu) as i64);
            for dj in -1..=1 {
                for di in -1..=1 {
                    let (a, b) = (i + di, j + dj);
                    if a >= 0 && b >= 0 && (a as usize) < nu && (b as usize) < nv {
                        masked[b as usize * nu + a as usize] = true;
                    }
                }
            }
        }
    }
    let masked_cells = masked.iter().filter(|&&m| m).count();

    let vote = |cells: &mut dyn Iterator<Item = usize>| -> Option<Option<bool>> {
        let (mut yes, mut no) = (0usize, 0usize);
        let mut seen = false;
        for k in cells {
            if let Some(p) = classes.present[k] {
                seen = true;
                if masked[k] {
                    continue;
                }
                if p {
                    yes += 1;
                } else {
                    no += 1;
                }
            }
        }
        if !seen {
            return None;
        }
        let total = yes + no;
        if total == 0 {
            return Some(None);
        }
        let bit = yes >= no;
        let share = yes.max(no) as f64 / total as f64;
        Some(if share >= BIT_MAJORITY { Some(bit) } else { None })
    };

    // columns: lines of constant u with u = cu (mod 3)
    let mut x_lines: Vec<(i64, Option<bool>)> = Vec::new();
    for i in 0..nu {
        let u = classes.u0 + i as i64;
        if modulo(u, 3) != cu {
            continue;
        }
        let mut it = (0..nv)
            .filter(|&j| modulo(classes.v0 + j as i64, 3) != cv)
            .map(|j| j * nu + i);
        if let Some(b) = vote(&mut it) {
            x_lines.push((u, b));
        }
    }
    let mut y_lines: Vec<(i64, Option<bool>)> = Vec::new();
    for j in 0..nv {
        let v = classes.v0 + j as i64;
        if modulo(v, 3) != cv {
            continue;
        }
        let mut it = (0..nu)
            .filter(|&i| modulo(classes.u0 + i as i64, 3) != cu)
            .map(|i| j * nu + i);
        if let Some(b) = vote(&mut it) {
            y_lines.push((v, b));
        }
    }
    // unreadable lines at either end carry no information (pattern edge)
    let pack = |mut lines: Vec<(i64, Option<bool>)>| -> (i64, Vec<Option<bool>>) {
        while lines.last().is_some_and(|l| l.1.is_none()) {
            lines.pop();
        }
        let skip = lines.iter().take_while(|l| l.1.is_none()).count();
        lines.drain(..skip);
        let Some(&(first, _)) = lines.first() else {
            return (0, Vec::new());
        };
        let last = lines.last().expect("non-empty").0;
        let mut bits = vec![None; ((last - first) / 3 + 1) as usize];
        for (c, b) in lines {
            bits[((c - first) / 3) as usize] = b;
        }
        (first, bits)
    };
    let (x_anchor_cell, x_bits) = pack(x_lines);
    let (y_anchor_cell, y_bits) = pack(y_lines);
    Ok(CodeWindows {
        x_bits,
        y_bits,
        x_anchor_cell,
        y_anchor_cell,
        coding_residue: (cu, cv),
        forced_residue: (fu, fv),
        masked_cells,
        confidence: classes.confidence(),
    })
}

/// Grid-to-pattern mapping for quarter turn `k`, up to an integer shift.
#[derive(Debug, Clone, Copy)]
struct Hypothesis {
    k: usize,
}

impl Hypothesis {
    /// Pattern `(column, row)` of node `(u, v)` before the shift.
    fn map(&self, u: i64, v: i64) -> (i64, i64) {
        match self.k {
            0 => (u, v),
            1 => (v, -u),
            2 => (-u, -v),
            _ => (-v, u),
        }
    }

    /// Whether the forced-absent node lands on residue `(0, 0)` of the
    /// pattern once the coding lines are put on residue 2.
    fn structural(&self, coding: (usize, usize), forced: (usize, usize)) -> bool {
        let (cu, cv) = (coding.0 as i64, coding.1 as i64);
        // under odd turns the u lines are pattern rows and the v lines columns
        let (col_code, row_code) = if self.k % 2 == 0 {
            (self.map(cu, 0).0, self.map(0, cv).1)
        } else {
            (self.map(0, cv).0, self.map(cu, 0).1)
        };
        let col0 = CODE_RESIDUE as i64 - col_code;
        let row0 = CODE_RESIDUE as i64 - row_code;
        let (fc, fr) = self.map(forced.0 as i64, forced.1 as i64);
        modulo(fc + col0, 3) == FORCED_ABSENT_RESIDUE && modulo(fr + row0, 3) == FORCED_ABSENT_RESIDUE
    }

    /// Phase planes whose level sets are the pattern columns and rows.
    fn planes(&self, phase: &PhaseResult) -> (PhasePlane, PhasePlane) {
        let (a, b) = (phase.plane1, phase.plane2);
        match self.k {
            0 => (a, b),
            1 => (b, a.negated()),
            2 => (a.negated(), b.negated()),
            _ => (b.negated(), a),
        }
    }
}

/// Bits of the pattern-x and pattern-y coding lines under `hyp`, in
/// increasing pattern coordinate, with the unshifted coordinate of the first.
fn oriented_windows(w: &CodeWindows, hyp: Hypothesis) -> ((i64, Vec<Option<bool>>), (i64, Vec<Option<bool>>)) {
    let fwd = |anchor: i64, bits: &[Option<bool>]| (anchor, bits.to_vec());
    let rev = |anchor: i64, bits: &[Option<bool>]| {
        let last = anchor + 3 * (bits.len() as i64 - 1);
        (-last, bits.iter().rev().copied().collect::<Vec<_>>())
    };
    let (xa, xb) = (w.x_anchor_cell, &w.x_bits[..]);
    let (ya, yb) = (w.y_anchor_cell, &w.y_bits[..]);
    match hyp.k {
        0 => (fwd(xa, xb), fwd(ya, yb)),
        1 => (fwd(ya, yb), rev(xa, xb)),
        2 => (rev(xa, xb), rev(ya, yb)),
        _ => (rev(ya, yb), fwd(xa, xb)),
    }
}

/// Decoded code position of the first line, if unique within the pattern.
fn decode_axis(index: &WindowIndex, bits: &[Option<bool>], extent: usize) -> Option<usize> {
    if bits.is_empty() {
        return None;
    }
    let cands: Vec<usize> = index
        .decode_span(bits)
        .into_iter()
        .filter(|&p| p + bits.len() <= extent)
        .collect();
    (cands.len() == 1).then(|| cands[0])
}

/// Tries the four quarter-turn hypotheses and fuses the decoded line
/// positions with the fine phase into the absolute pose of the image center.
pub fn resolve_absolute(
    windows: &CodeWindows,
    index_x: &WindowIndex,
    index_y: &WindowIndex,
    phase: &PhaseResult,
    spec: &MegarenaSpec,
    image_size: (usize, usize),
) -> Result<AbsolutePose2D> {
    let (cu, cv) = windows.coding_residue;
    let (fu, fv) = windows.forced_residue;
    let mut accepted = Vec::new();
    for k in 0..4 {
        let hyp = Hypothesis { k };
        if !hyp.structural((cu, cv), (fu, fv)) {
            continue;
        }
        let ((xs, xbits), (ys, ybits)) = oriented_windows(windows, hyp);
        let (Some(px), Some(py)) = (
            decode_axis(index_x, &xbits, spec.extent_codes),
            decode_axis(index_y, &ybits, spec.extent_codes),
        ) else {
            continue;
        };
        accepted.push((hyp, px, py, xs, ys));
    }
    let valid = accepted.len();
    if valid == 0 {
        return Err(Error::DecodeFailed(
            "no quarter-turn hypothesis decodes on both axes".into(),
        ));
    }
    if valid > 1 {
        return Err(Error::AmbiguousDecode { valid });
    }
    let (hyp, px, py, xs, ys) = accepted[0];
    let (px_plane, py_plane) = hyp.planes(phase);
    // pattern column of the first coding line is 3 px + 2
    let col_shift = (3 * px + CODE_RESIDUE) as i64 - xs;
    let row_shift = (3 * py + CODE_RESIDUE) as i64 - ys;
    let (cx, cy) = (
        (image_size.0 as f64 - 1.0) / 2.0,
        (image_size.1 as f64 - 1.0) / 2.0,
    );
    let x = px_plane.eval(cx, cy) / (2.0 * PI) + col_shift as f64;
    let y = py_plane.eval(cx, cy) / (2.0 * PI) + row_shift as f64;
    let cells = spec.cells() as f64;
    if !(x > -1.0 && y > -1.0 && x < cells && y < cells) {
        return Err(Error::DecodeFailed(format!(
            "decoded center ({x:.2}, {y:.2}) outside the {cells}-cell pattern"
        )));
    }
    let theta = px_plane.b.atan2(px_plane.a).rem_euclid(2.0 * PI);
    Ok(AbsolutePose2D {
        x: x * spec.period,
        y: y * spec.period,
        theta,
        confidence: windows.confidence,
        code_x: px,
        code_y: py,
        quadrant: hyp.k,
        valid_hypotheses: valid,
    })
}

/// Output of the full Megarena pipeline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MegarenaEstimate {
    pub pose: AbsolutePose2D,
    pub phase: PhaseResult,
    pub windows: CodeWindows,
    pub cells_sampled: usize,
    pub timings: StageTimings,
}

/// Spec plus the two window indexes, built once and reused across images.
#[derive(Debug, Clone)]
pub struct MegarenaDecoder {
    spec: MegarenaSpec,
    index_x: WindowIndex,
    index_y: WindowIndex,
}

impl MegarenaDecoder {
    pub fn new(spec: &MegarenaSpec) -> Result<Self> {
        let (xs, ys) = spec.sequences()?;
        Ok(Self {
            spec: spec.clone(),
            index_x: build_window_index(&xs, spec.n)?,
            index_y: build_window_index(&ys, spec.n)?,
        })
    }

    pub fn spec(&self) -> &MegarenaSpec {
        &self.spec
    }

    pub fn estimate(&self, img: &ImageGray, config: &AnalysisConfig) -> Result<MegarenaEstimate> {
        let phase = analyze(img, config)?;
        self.estimate_with_phase(img, phase)
    }

    /// Decoding stage alone, for a lattice already analyzed.
    pub fn estimate_with_phase(&self, img: &ImageGray, phase: PhaseResult) -> Result<MegarenaEstimate> {
        let t = Instant::now();
        let grid = sample_dots(img, &phase, self.spec.min_visible_periods())?;
        let classes = classify_dots(&grid)?;
        let windows = extract_code(&classes)?;
        let pose = resolve_absolute(
            &windows,
            &self.index_x,
            &self.index_y,
            &phase,
            &self.spec,
            (img.width(), img.height()),
        )?;
        let mut timings = phase.timings;
        timings.decode_ms = elapsed_ms(t);
        Ok(MegarenaEstimate {
            pose,
            cells_sampled: grid.sampled(),
            phase,
            windows,
            timings,
        })
    }
}
