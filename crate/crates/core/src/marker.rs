//! Small markers fully inside the frame: HP codes (three finder squares) and
//! stamps (square border). Detection gives a coarse region; the lattice phase
//! inside it gives the fine pose, and the region corner picks the integer
//! period index.

use std::collections::VecDeque;
use std::f64::consts::{FRAC_PI_2, PI};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::decode::{classify_dots, sample_node, DotSampleGrid};
use crate::error::{Error, Result};
use crate::image::ImageGray;
use crate::pattern::{read_marker_id, SmallMarkerGeometry, SmallMarkerKind};
use crate::phase::{analyze_masked, elapsed_ms, AnalysisConfig, PhaseResult, StageTimings};

/// Minimum intensity spread for detection to run at all.
const MIN_CONTRAST: f64 = 0.1;
/// Allowed relative deviation of each finder run from 1:1:3:1:1.
const RUN_TOLERANCE: f64 = 0.4;
const FINDER_RUNS: [f64; 5] = [1.0, 1.0, 3.0, 1.0, 1.0];
/// Finder hits needed in each scan direction.
const MIN_HITS: usize = 2;
const MODULE_AGREEMENT: f64 = 1.2;
const RIGHT_ANGLE_TOLERANCE: f64 = 0.15;
const MAX_ASPECT: f64 = 1.25;
/// At most this many finder candidates enter the triad search.
const MAX_FINDERS: usize = 40;
const DP_EPSILON: f64 = 0.02;
const MIN_SOLIDITY: f64 = 0.9;
/// Smallest quadrilateral side, in pixels.
const MIN_QUAD_SIDE: f64 = 20.0;
/// Stamps enclose dozens of dots; finder squares enclose one blob.
const MIN_ENCLOSED_BLOBS: usize = 16;
/// Pixels the marker must keep from the frame edge.
pub const FRAME_MARGIN_PX: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FinderPattern {
    pub center: (f64, f64),
    /// Pixels per finder module (half a lattice period).
    pub module_size: f64,
    /// Run-length match quality in `[0, 1]`.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkerRegion {
    /// Clockwise (on screen) from the origin corner.
    pub corners: [(f64, f64); 4],
    pub kind: SmallMarkerKind,
    pub marker_id: Option<u32>,
}

impl MarkerRegion {
    /// Longest over shortest side.
    pub fn aspect_ratio(&self) -> f64 {
        let sides: Vec<f64> = (0..4).map(|i| dist(self.corners[i], self.corners[(i + 1) % 4])).collect();
        let max = sides.iter().cloned().fold(0.0, f64::max);
        let min = sides.iter().cloned().fold(f64::INFINITY, f64::min);
        max / min
    }

    pub fn is_convex(&self) -> bool {
        let c = &self.corners;
        (0..4).all(|i| cross(sub(c[(i + 1) % 4], c[i]), sub(c[(i + 2) % 4], c[(i + 1) % 4])) > 0.0)
    }
}

fn sub(a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    (a.0 - b.0, a.1 - b.1)
}

fn cross(a: (f64, f64), b: (f64, f64)) -> f64 {
    a.0 * b.1 - a.1 * b.0
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

/// Otsu threshold over a 256-bin histogram of the image range.
pub fn otsu_threshold(img: &ImageGray) -> f64 {
    let (lo, hi) = img.min_max();
    if hi <= lo {
        return lo;
    }
    let bins = 256;
    let scale = (bins - 1) as f64 / (hi - lo);
    let mut hist = vec![0usize; bins];
    for &v in img.data() {
        hist[((v - lo) * scale).round() as usize] += 1;
    }
    let total = img.data().len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &h)| i as f64 * h as f64).sum();
    let (mut w0, mut sum0) = (0.0, 0.0);
    let (mut best, mut split) = (-1.0, 0);
    for (i, &h) in hist.iter().enumerate() {
        w0 += h as f64;
        sum0 += i as f64 * h as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let (m0, m1) = (sum0 / w0, (sum_all - sum0) / w1);
        let between = w0 * w1 * (m0 - m1).powi(2);
        if between > best {
            best = between;
            split = i;
        }
    }
    lo + (split as f64 + 0.5) / scale
}

fn has_contrast(img: &ImageGray) -> bool {
    let (lo, hi) = img.min_max();
    hi - lo > MIN_CONTRAST
}

#[derive(Debug, Clone, Copy)]
struct Hit {
    x: f64,
    y: f64,
    module: f64,
    score: f64,
    horizontal: bool,
}

/// Finder signatures along one line of booleans (bright = true).
fn scan_line(line: &[bool], mut emit: impl FnMut(f64, f64, f64)) {
    let mut runs: Vec<(bool, usize, usize)> = Vec::new();
    for (i, &b) in line.iter().enumerate() {
        match runs.last_mut() {
            Some(r) if r.0 == b => r.2 += 1,
            _ => runs.push((b, i, 1)),
        }
    }
    for w in runs.windows(5) {
        if !w[0].0 {
            continue;
        }
        let total: usize = w.iter().map(|r| r.2).sum();
        let module = total as f64 / 7.0;
        if module <= 1.0 {
            continue;
        }
        let dev = w
            .iter()
            .zip(FINDER_RUNS)
            .map(|(r, e)| (r.2 as f64 / (e * module) - 1.0).abs())
            .fold(0.0, f64::max);
        if dev <= RUN_TOLERANCE {
            let c = &w[2];
            emit(c.1 as f64 + (c.2 as f64 - 1.0) / 2.0, module, 1.0 - dev / RUN_TOLERANCE);
        }
    }
}

/// Intensity centroid of `(I - t)+` over a disc that holds the central
/// square but not the outer ring.
fn refine_center(img: &ImageGray, t: f64, (cx, cy): (f64, f64), module: f64) -> (f64, f64) {
    let r = 2.3 * module;
    let (w, h) = (img.width() as i64, img.height() as i64);
    let (mut sx, mut sy, mut sw) = (0.0, 0.0, 0.0);
    for y in ((cy - r).floor() as i64).max(0)..=((cy + r).ceil() as i64).min(h - 1) {
        for x in ((cx - r).floor() as i64).max(0)..=((cx + r).ceil() as i64).min(w - 1) {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            if dx * dx + dy * dy > r * r {
                continue;
            }
            let wgt = (img.get(x as usize, y as usize) - t).max(0.0);
            sx += wgt * x as f64;
            sy += wgt * y as f64;
            sw += wgt;
        }
    }
    if sw > 0.0 {
        (sx / sw, sy / sw)
    } else {
        (cx, cy)
    }
}

/// Scans rows and columns for 1:1:3:1:1 bright/dark runs, clusters the
/// crossings and refines each center by intensity centroid. Sorted by
/// decreasing score.
pub fn detect_finder_patterns(img: &ImageGray) -> Vec<FinderPattern> {
    if !has_contrast(img) {
        return Vec::new();
    }
    let t = otsu_threshold(img);
    let (w, h) = (img.width(), img.height());
    let mut hits = Vec::new();
    let mut line = vec![false; w.max(h)];
    for y in 0..h {
        for (x, b) in line[..w].iter_mut().enumerate() {
            *b = img.get(x, y) > t;
        }
        scan_line(&line[..w], |x, module, score| {
            hits.push(Hit { x, y: y as f64, module, score, horizontal: true })
        });
    }
    for x in 0..w {
        for (y, b) in line[..h].iter_mut().enumerate() {
            *b = img.get(x, y) > t;
        }
        scan_line(&line[..h], |y, module, score| {
            hits.push(Hit { x: x as f64, y, module, score, horizontal: false })
        });
    }

    hits.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut clusters: Vec<Vec<Hit>> = Vec::new();
    for hit in hits {
        let home = clusters.iter_mut().find(|c| {
            let n = c.len() as f64;
            let (mx, my) = c.iter().fold((0.0, 0.0), |a, h| (a.0 + h.x / n, a.1 + h.y / n));
            let module = c[0].module;
            (mx - hit.x).hypot(my - hit.y) < 1.5 * module
                && hit.module / module < MODULE_AGREEMENT
                && module / hit.module < MODULE_AGREEMENT
        });
        match home {
            Some(c) => c.push(hit),
            None => clusters.push(vec![hit]),
        }
    }

    let mut found: Vec<FinderPattern> = Vec::new();
    for c in clusters {
        let (hz, vt): (Vec<&Hit>, Vec<&Hit>) = c.iter().partition(|h| h.horizontal);
        if hz.len() < MIN_HITS || vt.len() < MIN_HITS {
            continue;
        }
        // a row crossing fixes x well, a column crossing fixes y
        let x = hz.iter().map(|h| h.x).sum::<f64>() / hz.len() as f64;
        let y = vt.iter().map(|h| h.y).sum::<f64>() / vt.len() as f64;
        let module = c.iter().map(|h| h.module).sum::<f64>() / c.len() as f64;
        let score = c.iter().map(|h| h.score).sum::<f64>() / c.len() as f64;
        let mut center = refine_center(img, t, (x, y), module);
        center = refine_center(img, t, center, module);
        if let Some(prev) = found.iter_mut().find(|f| dist(f.center, center) < 2.0 * module) {
            if score > prev.score {
                *prev = FinderPattern { center, module_size: module, score };
            }
            continue;
        }
        found.push(FinderPattern { center, module_size: module, score });
    }
    found.sort_by(|a, b| b.score.total_cmp(&a.score));
    found
}

/// Groups finder triads into HP regions: consistent module size, a right
/// angle at the origin finder and equal arms. The fourth corner completes
/// the parallelogram. Each finder joins at most one region.
pub fn group_markers(patterns: &[FinderPattern]) -> Vec<MarkerRegion> {
    let p = &patterns[..patterns.len().min(MAX_FINDERS)];
    if p.len() < 3 {
        return Vec::new();
    }
    let mut triads: Vec<(f64, [usize; 3])> = Vec::new();
    for i in 0..p.len() {
        for j in i + 1..p.len() {
            for k in j + 1..p.len() {
                let modules = [p[i].module_size, p[j].module_size, p[k].module_size];
                let mmax = modules.iter().cloned().fold(0.0, f64::max);
                let mmin = modules.iter().cloned().fold(f64::INFINITY, f64::min);
                if mmax / mmin > MODULE_AGREEMENT {
                    continue;
                }
                for (o, a, b) in [(i, j, k), (j, i, k), (k, i, j)] {
                    let (va, vb) = (sub(p[a].center, p[o].center), sub(p[b].center, p[o].center));
                    let (la, lb) = (va.0.hypot(va.1), vb.0.hypot(vb.1));
                    // arms of the smallest marker span five periods, ten modules
                    if la.min(lb) < 8.0 * mmin || la.max(lb) / la.min(lb) > MAX_ASPECT {
                        continue;
                    }
                    let angle = ((va.0 * vb.0 + va.1 * vb.1) / (la * lb)).clamp(-1.0, 1.0).acos();
                    let err = (angle - FRAC_PI_2).abs();
                    if err > RIGHT_ANGLE_TOLERANCE {
                        continue;
                    }
                    let (a, b) = if cross(va, vb) > 0.0 { (a, b) } else { (b, a) };
                    let cost = err / RIGHT_ANGLE_TOLERANCE + (la.max(lb) / la.min(lb) - 1.0);
                    triads.push((cost, [o, a, b]));
                }
            }
        }
    }
    triads.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut used = vec![false; p.len()];
    let mut regions = Vec::new();
    for (_, [o, a, b]) in triads {
        if used[o] || used[a] || used[b] {
            continue;
        }
        let (co, ca, cb) = (p[o].center, p[a].center, p[b].center);
        let region = MarkerRegion {
            corners: [co, ca, (ca.0 + cb.0 - co.0, ca.1 + cb.1 - co.1), cb],
            kind: SmallMarkerKind::Hp,
            marker_id: None,
        };
        if region.is_convex() && region.aspect_ratio() <= MAX_ASPECT {
            used[o] = true;
            used[a] = true;
            used[b] = true;
            regions.push(region);
        }
    }
    regions
}

struct Components {
    labels: Vec<u32>,
    /// `(area, min x, min y, max x, max y)` per label, label 0 unused.
    stats: Vec<(usize, usize, usize, usize, usize)>,
}

fn label_components(mask: &[bool], w: usize, h: usize) -> Components {
    let mut labels = vec![0u32; w * h];
    let mut stats = vec![(0, 0, 0, 0, 0)];
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if !mask[start] || labels[start] != 0 {
            continue;
        }
        let label = stats.len() as u32;
        let mut st = (0, usize::MAX, usize::MAX, 0, 0);
        labels[start] = label;
        queue.push_back(start);
        while let Some(k) = queue.pop_front() {
            let (x, y) = (k % w, k / w);
            st.0 += 1;
            st.1 = st.1.min(x);
            st.2 = st.2.min(y);
            st.3 = st.3.max(x);
            st.4 = st.4.max(y);
            let mut visit = |n: usize| {
                if mask[n] && labels[n] == 0 {
                    labels[n] = label;
                    queue.push_back(n);
                }
            };
            if x > 0 {
                visit(k - 1);
            }
            if x + 1 < w {
                visit(k + 1);
            }
            if y > 0 {
                visit(k - w);
            }
            if y + 1 < h {
                visit(k + w);
            }
        }
        stats.push(st);
    }
    Components { labels, stats }
}

/// Moore-neighbor trace of the outer boundary of the component holding
/// `start`, which must be its first pixel in row-major order.
fn trace_boundary(labels: &[u32], w: usize, h: usize, start: usize) -> Vec<(i64, i64)> {
    const DIRS: [(i64, i64); 8] = [(1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1)];
    let label = labels[start];
    let inside = |x: i64, y: i64| {
        x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h && labels[y as usize * w + x as usize] == label
    };
    let s = ((start % w) as i64, (start / w) as i64);
    let mut contour = vec![s];
    let (mut cur, mut dir) = (s, 7usize);
    let limit = 4 * labels.len();
    for _ in 0..limit {
        let mut next = None;
        for i in 0..8 {
            let d = (dir + 6 + i) % 8;
            let p = (cur.0 + DIRS[d].0, cur.1 + DIRS[d].1);
            if inside(p.0, p.1) {
                next = Some((p, d));
                break;
            }
        }
        let Some((p, d)) = next else { break };
        if p == s && contour.len() > 1 {
            break;
        }
        contour.push(p);
        cur = p;
        dir = d;
    }
    contour
}

fn point_line_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let ab = sub(b, a);
    let len = ab.0.hypot(ab.1);
    if len == 0.0 {
        return dist(p, a);
    }
    cross(ab, sub(p, a)).abs() / len
}

/// Douglas-Peucker on an open polyline; returns indices of kept points.
fn douglas_peucker(pts: &[(f64, f64)], eps: f64, out: &mut Vec<usize>, lo: usize, hi: usize) {
    let mut best = (0.0, lo);
    for i in lo + 1..hi {
        let d = point_line_distance(pts[i], pts[lo], pts[hi]);
        if d > best.0 {
            best = (d, i);
        }
    }
    if best.0 > eps {
        douglas_peucker(pts, eps, out, lo, best.1);
        out.push(best.1);
        douglas_peucker(pts, eps, out, best.1, hi);
    }
}

/// Closed-contour simplification. Starts from the point farthest from the
/// centroid (a true vertex of any convex polygon), splits at the point
/// farthest from it and simplifies both halves.
fn simplify_closed(pts: &[(f64, f64)], eps: f64) -> Vec<usize> {
    let n = pts.len();
    let c = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0 / n as f64, a.1 + p.1 / n as f64));
    let farthest = |from: (f64, f64)| {
        (0..n)
            .max_by(|&a, &b| dist(pts[a], from).total_cmp(&dist(pts[b], from)))
            .unwrap_or(0)
    };
    let start = farthest(c);
    let mut ring: Vec<(f64, f64)> = (0..=n).map(|k| pts[(start + k) % n]).collect();
    ring[n] = ring[0];
    let far = farthest(pts[start]);
    let far = (far + n - start) % n;
    let mut out = vec![0];
    douglas_peucker(&ring, eps, &mut out, 0, far);
    out.push(far);
    douglas_peucker(&ring, eps, &mut out, far, n);
    out.into_iter().map(|k| (k + start) % n).collect()
}

fn shoelace(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len();
    (0..n).map(|i| cross(pts[i], pts[(i + 1) % n])).sum::<f64>() / 2.0
}

fn convex_hull(mut pts: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &(f64, f64)>> =
            if pass == 0 { Box::new(pts.iter()) } else { Box::new(pts.iter().rev()) };
        for &p in iter {
            while hull.len() >= start + 2
                && cross(sub(hull[hull.len() - 1], hull[hull.len() - 2]), sub(p, hull[hull.len() - 1])) <= 0.0
            {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

/// Total-least-squares line through `pts`: point and unit direction.
fn fit_line(pts: &[(f64, f64)]) -> ((f64, f64), (f64, f64)) {
    let n = pts.len() as f64;
    let (mx, my) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0 / n, a.1 + p.1 / n));
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in pts {
        let (dx, dy) = (p.0 - mx, p.1 - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let angle = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    ((mx, my), (angle.cos(), angle.sin()))
}

fn intersect(l1: ((f64, f64), (f64, f64)), l2: ((f64, f64), (f64, f64))) -> Option<(f64, f64)> {
    let den = cross(l1.1, l2.1);
    if den.abs() < 1e-9 {
        return None;
    }
    let t = cross(sub(l2.0, l1.0), l2.1) / den;
    Some((l1.0 .0 + t * l1.1 .0, l1.0 .1 + t * l1.1 .1))
}

/// Sub-pixel corners: a line through the middle of each side's contour run,
/// pushed half a pixel outward (boundary pixel centers sit inside the edge).
fn refine_quad(contour: &[(f64, f64)], vertices: &[usize]) -> Option<[(f64, f64); 4]> {
    let n = contour.len();
    let centroid = vertices
        .iter()
        .fold((0.0, 0.0), |a, &i| (a.0 + contour[i].0 / 4.0, a.1 + contour[i].1 / 4.0));
    let mut lines = Vec::with_capacity(4);
    for s in 0..4 {
        let (a, b) = (vertices[s], vertices[(s + 1) % 4]);
        let len = (b + n - a) % n;
        let skip = len * 15 / 100;
        let side: Vec<(f64, f64)> = (skip..len.saturating_sub(skip)).map(|k| contour[(a + k) % n]).collect();
        if side.len() < 3 {
            return None;
        }
        let (p, d) = fit_line(&side);
        let mut normal = (-d.1, d.0);
        if normal.0 * (p.0 - centroid.0) + normal.1 * (p.1 - centroid.1) < 0.0 {
            normal = (-normal.0, -normal.1);
        }
        lines.push(((p.0 + 0.5 * normal.0, p.1 + 0.5 * normal.1), d));
    }
    let mut corners = [(0.0, 0.0); 4];
    for (s, c) in corners.iter_mut().enumerate() {
        *c = intersect(lines[(s + 3) % 4], lines[s])?;
    }
    Some(corners)
}

/// Stamp candidates: Otsu binarization, outer boundary of each bright
/// component, four-vertex simplification, convexity, solidity and aspect
/// checks. The origin corner is the one nearest the image origin; its true
/// identity is settled later by the glyph.
pub fn detect_quadrilateral(img: &ImageGray) -> Vec<MarkerRegion> {
    if !has_contrast(img) {
        return Vec::new();
    }
    let t = otsu_threshold(img);
    let (w, h) = (img.width(), img.height());
    let mask: Vec<bool> = img.data().iter().map(|&v| v > t).collect();
    let comps = label_components(&mask, w, h);
    let mut first = vec![usize::MAX; comps.stats.len()];
    for (k, &l) in comps.labels.iter().enumerate() {
        if l != 0 && first[l as usize] == usize::MAX {
            first[l as usize] = k;
        }
    }

    let mut regions = Vec::new();
    for (label, st) in comps.stats.iter().enumerate().skip(1) {
        let (bw, bh) = ((st.3 - st.1 + 1) as f64, (st.4 - st.2 + 1) as f64);
        if bw < MIN_QUAD_SIDE || bh < MIN_QUAD_SIDE {
            continue;
        }
        let contour: Vec<(f64, f64)> = trace_boundary(&comps.labels, w, h, first[label])
            .into_iter()
            .map(|(x, y)| (x as f64, y as f64))
            .collect();
        if contour.len() < 8 {
            continue;
        }
        let perimeter: f64 = (0..contour.len())
            .map(|i| dist(contour[i], contour[(i + 1) % contour.len()]))
            .sum();
        let mut vertices = simplify_closed(&contour, DP_EPSILON * perimeter);
        if vertices.len() != 4 {
            continue;
        }
        vertices.sort_unstable();
        let area = shoelace(&contour).abs();
        let hull = convex_hull(contour.clone());
        let hull_area = shoelace(&hull).abs();
        if hull_area <= 0.0 || area / hull_area < MIN_SOLIDITY {
            continue;
        }
        let enclosed = comps
            .stats
            .iter()
            .enumerate()
            .skip(1)
            .filter(|&(l, s)| l != label && s.1 > st.1 && s.2 > st.2 && s.3 < st.3 && s.4 < st.4)
            .count();
        if enclosed < MIN_ENCLOSED_BLOBS {
            continue;
        }
        let Some(mut corners) = refine_quad(&contour, &vertices) else { continue };
        if shoelace(&corners) < 0.0 {
            corners.reverse();
        }
        let origin = (0..4)
            .min_by(|&a, &b| (corners[a].0 + corners[a].1).total_cmp(&(corners[b].0 + corners[b].1)))
            .expect("four corners");
        corners.rotate_left(origin);
        let region = MarkerRegion {
            corners,
            kind: SmallMarkerKind::Stamp,
            marker_id: None,
        };
        if region.is_convex() && region.aspect_ratio() <= MAX_ASPECT {
            regions.push(region);
        }
    }
    regions
}

/// Every marker region of the given kind in the image.
pub fn detect_markers(img: &ImageGray, kind: SmallMarkerKind) -> Vec<MarkerRegion> {
    match kind {
        SmallMarkerKind::Hp => group_markers(&detect_finder_patterns(img)),
        SmallMarkerKind::Stamp => detect_quadrilateral(img),
    }
}

/// Pose of one small marker in the image.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SmallMarkerEstimate {
    pub kind: SmallMarkerKind,
    /// Pixel position of the marker center.
    pub center_px: (f64, f64),
    /// Marker center relative to the image center, in periods.
    pub x: f64,
    pub y: f64,
    /// Direction of the marker x axis in the image, in `[0, 2 pi)`.
    pub theta: f64,
    pub period_px: f64,
    pub marker_id: Option<u32>,
    /// Quarter turns between the detected and the true origin corner.
    pub quadrant: usize,
    /// Region with corners recomputed from the lattice, true origin first.
    pub region: MarkerRegion,
    pub confidence: f64,
    pub phase: PhaseResult,
    pub timings: StageTimings,
}

/// Affine layout-to-pixel map fitted to the four region corners.
#[derive(Debug, Clone, Copy)]
struct Affine {
    m: [[f64; 2]; 2],
    layout_center: (f64, f64),
    pixel_center: (f64, f64),
}

impl Affine {
    fn fit(layout: &[(f64, f64); 4], pixel: &[(f64, f64); 4]) -> Self {
        let lc = layout.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0 / 4.0, a.1 + p.1 / 4.0));
        let pc = pixel.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0 / 4.0, a.1 + p.1 / 4.0));
        // m = (sum dP dX^T)(sum dX dX^T)^-1
        let (mut a, mut s) = ([[0.0; 2]; 2], [[0.0; 2]; 2]);
        for (l, p) in layout.iter().zip(pixel) {
            let dx = [l.0 - lc.0, l.1 - lc.1];
            let dp = [p.0 - pc.0, p.1 - pc.1];
            for r in 0..2 {
                for c in 0..2 {
                    a[r][c] += dp[r] * dx[c];
                    s[r][c] += dx[r] * dx[c];
                }
            }
        }
        let det = s[0][0] * s[1][1] - s[0][1] * s[1][0];
        let inv = [[s[1][1] / det, -s[0][1] / det], [-s[1][0] / det, s[0][0] / det]];
        let mut m = [[0.0; 2]; 2];
        for r in 0..2 {
            for c in 0..2 {
                m[r][c] = a[r][0] * inv[0][c] + a[r][1] * inv[1][c];
            }
        }
        Self {
            m,
            layout_center: lc,
            pixel_center: pc,
        }
    }

    fn apply(&self, (x, y): (f64, f64)) -> (f64, f64) {
        let (dx, dy) = (x - self.layout_center.0, y - self.layout_center.1);
        (
            self.pixel_center.0 + self.m[0][0] * dx + self.m[0][1] * dy,
            self.pixel_center.1 + self.m[1][0] * dx + self.m[1][1] * dy,
        )
    }

    fn invert(&self, (px, py): (f64, f64)) -> (f64, f64) {
        let m = &self.m;
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        let (dx, dy) = (px - self.pixel_center.0, py - self.pixel_center.1);
        (
            self.layout_center.0 + (m[1][1] * dx - m[0][1] * dy) / det,
            self.layout_center.1 + (-m[1][0] * dx + m[0][0] * dy) / det,
        )
    }

    fn scale(&self) -> f64 {
        (self.m[0][0].hypot(self.m[1][0]) + self.m[0][1].hypot(self.m[1][1])) / 2.0
    }
}

/// Quarter turn `q` of a layout point about the center of an `n`-cell marker.
fn turn(q: usize, n: usize, (x, y): (f64, f64)) -> (f64, f64) {
    let m = n as f64 - 1.0;
    match q % 4 {
        0 => (x, y),
        1 => (m - y, x),
        2 => (m - x, m - y),
        _ => (y, m - x),
    }
}

/// Lattice-node coordinates `(u, v)` of layout points in the detected frame.
#[derive(Debug, Clone, Copy)]
struct NodeMap {
    origin: (f64, f64),
    col: (f64, f64),
    row: (f64, f64),
}

impl NodeMap {
    fn uv(&self, (x, y): (f64, f64)) -> (f64, f64) {
        (
            self.origin.0 + x * self.col.0 + y * self.row.0,
            self.origin.1 + x * self.col.1 + y * self.row.1,
        )
    }
}

fn unit_axis(v: (f64, f64)) -> Option<(f64, f64)> {
    let r = (v.0.round(), v.1.round());
    let ok = (r.0.abs() + r.1.abs() == 1.0) && (v.0 - r.0).abs() < 0.25 && (v.1 - r.1).abs() < 0.25;
    ok.then_some(r)
}

/// Fine pose and id of one detected marker. The region's corner fixes the
/// integer lattice index to within half a period, the phase supplies the
/// fraction, and the asymmetry glyph fixes which corner is the origin.
pub fn estimate_small_marker(
    img: &ImageGray,
    region: &MarkerRegion,
    geom: &SmallMarkerGeometry,
) -> Result<SmallMarkerEstimate> {
    geom.validate()?;
    if region.kind != geom.kind {
        return Err(Error::InvalidArgument(format!(
            "region is a {:?} marker, geometry describes {:?}",
            region.kind, geom.kind
        )));
    }
    let n = geom.periods_across;
    let affine = Affine::fit(&geom.region_corners(), &region.corners);
    let period_guess = affine.scale();

    let (w, h) = (img.width() as f64, img.height() as f64);
    let extent = [(-0.5, -0.5), (n as f64 - 0.5, -0.5), (n as f64 - 0.5, n as f64 - 0.5), (-0.5, n as f64 - 0.5)]
        .map(|p| affine.apply(p));
    let m = FRAME_MARGIN_PX;
    if extent.iter().any(|p| p.0 < m || p.1 < m || p.0 > w - 1.0 - m || p.1 > h - 1.0 - m) {
        return Err(Error::RegionOutsideFrame { margin: m });
    }

    let t = Instant::now();
    let pad = period_guess;
    let x0 = (extent.iter().map(|p| p.0).fold(f64::INFINITY, f64::min) - pad).floor().max(0.0) as usize;
    let y0 = (extent.iter().map(|p| p.1).fold(f64::INFINITY, f64::min) - pad).floor().max(0.0) as usize;
    let x1 = (extent.iter().map(|p| p.0).fold(0.0, f64::max) + pad).ceil().min(w - 1.0) as usize;
    let y1 = (extent.iter().map(|p| p.1).fold(0.0, f64::max) + pad).ceil().min(h - 1.0) as usize;
    let crop = img.crop(x0, y0, x1 - x0 + 1, y1 - y0 + 1);
    let mut timings = StageTimings::default();
    timings.detect_ms = elapsed_ms(t);
    let config = AnalysisConfig {
        period_hint_px: Some((0.7 * period_guess, 1.4 * period_guess)),
        ..AnalysisConfig::apodized()
    };
    // finder rings and borders carry energy at the lattice frequency; fit
    // only where every neighboring cell is a plain dot cell
    let (cw, ch) = (crop.width(), crop.height());
    let mut mask = vec![false; cw * ch];
    for y in 0..ch {
        for x in 0..cw {
            let (lx, ly) = affine.invert(((x + x0) as f64, (y + y0) as f64));
            let (c, r) = (lx.round() as i64, ly.round() as i64);
            mask[y * cw + x] = (-1..=1).all(|dr| {
                (-1..=1).all(|dc| {
                    let (rr, cc) = (r + dr, c + dc);
                    rr >= 0 && cc >= 0 && geom.is_dot_cell(rr as usize, cc as usize)
                })
            });
        }
    }
    let phase = analyze_masked(&crop, &config, Some(&mask))?.shifted(x0 as f64, y0 as f64);
    timings.accumulate(&phase.timings);

    let t = Instant::now();
    let f = |p: (f64, f64)| {
        let q = affine.apply(p);
        (phase.plane1.eval(q.0, q.1) / (2.0 * PI), phase.plane2.eval(q.0, q.1) / (2.0 * PI))
    };
    let c = (n as f64 - 1.0) / 2.0;
    let span = n as f64 - 1.0;
    let (a, b) = (f((0.0, c)), f((span, c)));
    let col = unit_axis(((b.0 - a.0) / span, (b.1 - a.1) / span));
    let (a, b) = (f((c, 0.0)), f((c, span)));
    let row = unit_axis(((b.0 - a.0) / span, (b.1 - a.1) / span));
    let (Some(col), Some(row)) = (col, row) else {
        return Err(Error::DecodeFailed("marker axes do not follow the lattice".into()));
    };
    if cross(col, row) != 1.0 {
        return Err(Error::DecodeFailed("marker axes are mirrored against the lattice".into()));
    }
    let fc = f((c, c));
    let origin = (
        (fc.0 - c * (col.0 + row.0)).round(),
        (fc.1 - c * (col.1 + row.1)).round(),
    );
    let map = NodeMap { origin, col, row };
    let pixel_of = |p: (f64, f64)| {
        let (u, v) = map.uv(p);
        phase.node_position(u, v)
    };

    // presence of every dot cell, in the detected frame
    let mut values = vec![None; n * n];
    let mut centers = vec![(0.0, 0.0); n * n];
    for r in 0..n {
        for cc in 0..n {
            let q = pixel_of((cc as f64, r as f64));
            centers[r * n + cc] = q;
            if geom.is_dot_cell(r, cc) && q.0 >= 0.0 && q.1 >= 0.0 && q.0 <= w - 1.0 && q.1 <= h - 1.0 {
                values[r * n + cc] = Some(sample_node(img, q.0, q.1, phase.period_px));
            }
        }
    }
    let grid = DotSampleGrid {
        u0: 0,
        v0: 0,
        nu: n,
        nv: n,
        values,
        centers,
        visible_periods: (n, n),
    };
    let classes = classify_dots(&grid)?;
    let at = |q: usize, r: usize, c: usize| -> Option<bool> {
        let (x, y) = turn(q, n, (c as f64, r as f64));
        classes.get(x.round() as i64, y.round() as i64)
    };
    let glyph = geom.glyph_cells();
    let valid: Vec<usize> = (0..4)
        .filter(|&q| glyph.iter().all(|&((r, c), e)| at(q, r, c) == Some(e)))
        .collect();
    if valid.len() != 1 {
        return Err(Error::GlyphAmbiguous { valid: valid.len() });
    }
    let q = valid[0];
    let marker_id = geom
        .id_cells()
        .iter()
        .all(|&(r, c)| at(q, r, c).is_some())
        .then(|| read_marker_id(geom, |r, c| at(q, r, c) == Some(true)));

    let center_px = pixel_of(turn(q, n, (c, c)));
    let ex = pixel_of(turn(q, n, (c + 1.0, c)));
    let theta = (ex.1 - center_px.1).atan2(ex.0 - center_px.0).rem_euclid(2.0 * PI);
    let corners = geom.region_corners().map(|p| pixel_of(turn(q, n, p)));
    timings.decode_ms = elapsed_ms(t);

    Ok(SmallMarkerEstimate {
        kind: geom.kind,
        center_px,
        x: (center_px.0 - (w - 1.0) / 2.0) / phase.period_px,
        y: (center_px.1 - (h - 1.0) / 2.0) / phase.period_px,
        theta,
        period_px: phase.period_px,
        marker_id,
        quadrant: q,
        region: MarkerRegion {
            corners,
            kind: geom.kind,
            marker_id,
        },
        confidence: classes.confidence(),
        phase,
        timings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn otsu_splits_two_levels() {
        let img = ImageGray::from_fn(40, 40, |x, _| if x < 10 { 0.2 } else { 0.8 });
        let t = otsu_threshold(&img);
        assert!(t > 0.2 && t < 0.8, "{t}");
    }

    #[test]
    fn run_signature_accepts_scaled_pattern() {
        let mut line = vec![false; 10];
        for (len, b) in [(4, true), (4, false), (12, true), (4, false), (4, true)] {
            line.extend(std::iter::repeat_n(b, len));
        }
        line.extend([false; 10]);
        let mut found = Vec::new();
        scan_line(&line, |x, m, s| found.push((x, m, s)));
        assert_eq!(found.len(), 1);
        let (x, m, s) = found[0];
        assert!((x - 23.5).abs() < 1e-12 && (m - 4.0).abs() < 1e-12 && (s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn run_signature_rejects_even_runs() {
        let mut line = vec![false; 5];
        for _ in 0..6 {
            line.extend([true; 4]);
            line.extend([false; 4]);
        }
        let mut n = 0;
        scan_line(&line, |_, _, _| n += 1);
        assert_eq!(n, 0);
    }

    #[test]
    fn hull_and_area_of_square() {
        let pts = vec![(0.0, 0.0), (2.0, 0.0), (1.0, 1.0), (2.0, 2.0), (0.0, 2.0)];
        let hull = convex_hull(pts);
        assert_eq!(hull.len(), 4);
        assert!((shoelace(&hull).abs() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn affine_recovers_similarity() {
        let layout = [(0.0, 0.0), (10.0, 0.0), (10.0, 10.0), (0.0, 10.0)];
        let (s, co) = 0.3f64.sin_cos();
        let pixel = layout.map(|(x, y)| (50.0 + 8.0 * (co * x - s * y), 20.0 + 8.0 * (s * x + co * y)));
        let a = Affine::fit(&layout, &pixel);
        let p = a.apply((3.0, 7.0));
        let q = (50.0 + 8.0 * (co * 3.0 - s * 7.0), 20.0 + 8.0 * (s * 3.0 + co * 7.0));
        assert!(dist(p, q) < 1e-9);
        assert!((a.scale() - 8.0).abs() < 1e-9);
    }

    #[test]
    fn quarter_turns_compose() {
        let p = (2.0, 5.0);
        let mut q = p;
        for _ in 0..4 {
            q = turn(1, 12, q);
        }
        assert_eq!(q, p);
        assert_eq!(turn(1, 12, turn(1, 12, p)), turn(2, 12, p));
    }
}
