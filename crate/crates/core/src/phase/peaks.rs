use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::phase::{SpectralPeak, Spectrum};

/// Peak-to-median magnitude ratio below which no lattice is reported.
const MIN_PEAK_RATIO: f64 = 5.0;
/// Allowed deviation of the lobe separation from a right angle.
const ORTHOGONALITY_TOLERANCE: f64 = 0.35;
/// Allowed ratio between the two lobe frequencies (square lattices).
const MAX_FREQUENCY_RATIO: f64 = 1.25;
const CANDIDATES: usize = 32;

fn median(mut values: Vec<f64>) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mid = values.len() / 2;
    let (_, m, _) = values.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
    *m
}

/// Vertex of a quadratic fitted to log-magnitudes on the 3x3 neighborhood,
/// as an offset in bins. Falls back to independent 1-D parabolas when the
/// 2-D fit has no interior maximum.
fn refine_offset(ln: &[[f64; 3]; 3]) -> (f64, f64) {
    // ln[row][col] with row = dy + 1, col = dx + 1
    let col_mean = |c: usize| (ln[0][c] + ln[1][c] + ln[2][c]) / 3.0;
    let row_mean = |r: usize| (ln[r][0] + ln[r][1] + ln[r][2]) / 3.0;
    let bx = (col_mean(2) - col_mean(0)) / 2.0;
    let by = (row_mean(2) - row_mean(0)) / 2.0;
    let dxx = (col_mean(2) + col_mean(0)) / 2.0 - col_mean(1);
    let dyy = (row_mean(2) + row_mean(0)) / 2.0 - row_mean(1);
    let fxy = (ln[2][2] + ln[0][0] - ln[0][2] - ln[2][0]) / 4.0;
    let det = 4.0 * dxx * dyy - fxy * fxy;
    if dxx < 0.0 && dyy < 0.0 && det > 0.0 {
        let ox = (-bx * 2.0 * dyy + fxy * by) / det;
        let oy = (-2.0 * dxx * by + fxy * bx) / det;
        if ox.abs() <= 1.0 && oy.abs() <= 1.0 {
            return (ox, oy);
        }
    }
    let one_d = |lo: f64, mid: f64, hi: f64| {
        let den = lo - 2.0 * mid + hi;
        if den < 0.0 {
            (0.5 * (lo - hi) / den).clamp(-0.5, 0.5)
        } else {
            0.0
        }
    };
    (
        one_d(ln[1][0], ln[1][1], ln[1][2]),
        one_d(ln[0][1], ln[1][1], ln[2][1]),
    )
}

/// Finds the two lattice lobes: dominant non-DC local maxima in the upper
/// half-plane whose directions are orthogonal within 0.35 rad. Returns them
/// ordered by polar angle in `[0, pi)`.
pub fn find_lattice_peaks(
    spec: &Spectrum,
    period_hint_px: Option<(f64, f64)>,
) -> Result<(SpectralPeak, SpectralPeak)> {
    let (w, h) = (spec.width(), spec.height());
    // squared magnitudes order the same way and skip a square root per bin
    let mag2: Vec<f64> = spec.data().iter().map(|z| z.norm_sqr()).collect();
    let (f_lo, f_hi) = match period_hint_px {
        Some((p_min, p_max)) => (1.0 / p_max.max(p_min), 1.0 / p_min.min(p_max)),
        None => (2.5 / w.min(h) as f64, 0.5),
    };

    let at = |kx: i64, ky: i64| {
        mag2[ky.rem_euclid(h as i64) as usize * w + kx.rem_euclid(w as i64) as usize].sqrt()
    };
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for ky in 0..h {
        let fy = spec.frequency(0, ky).1;
        if fy < 0.0 || fy.abs() > f_hi {
            continue;
        }
        let rows = [(ky + h - 1) % h * w, ky * w, (ky + 1) % h * w];
        for kx in 0..w {
            let fx = spec.frequency(kx, 0).0;
            if fy == 0.0 && fx <= 0.0 {
                continue;
            }
            let f = fx.hypot(fy);
            if f < f_lo || f > f_hi {
                continue;
            }
            let m = mag2[ky * w + kx];
            if m == 0.0 {
                continue;
            }
            let cols = [(kx + w - 1) % w, kx, (kx + 1) % w];
            let is_max = rows
                .iter()
                .flat_map(|&r| cols.iter().map(move |&c| r + c))
                .all(|i| i == ky * w + kx || mag2[i] <= m);
            if is_max {
                candidates.push((m.sqrt(), kx, ky));
            }
        }
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0));
    candidates.truncate(CANDIDATES);

    let med = median(mag2[1..].to_vec()).sqrt();
    let best = candidates.first().map_or(0.0, |c| c.0);
    let ratio = if med > 0.0 {
        best / med
    } else if best > 0.0 {
        f64::INFINITY
    } else {
        0.0
    };
    // rounding residue of a flat image is not a lattice
    let floor = 1e-9 * (w * h) as f64;
    if candidates.is_empty() || ratio < MIN_PEAK_RATIO || best < floor {
        return Err(Error::NoLatticeFound { ratio });
    }

    let refine = |&(m, kx, ky): &(f64, usize, usize)| {
        let mut ln = [[0.0; 3]; 3];
        for (r, row) in ln.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = at(kx as i64 + c as i64 - 1, ky as i64 + r as i64 - 1)
                    .max(1e-300)
                    .ln();
            }
        }
        let (ox, oy) = refine_offset(&ln);
        let (fx, fy) = spec.frequency(kx, ky);
        let (fx, fy) = (fx + ox / w as f64, fy + oy / h as f64);
        // refinement can cross the half-plane edge; flip back so the two
        // lobes, sorted by angle, stay a right-handed pair
        let s = if fy < 0.0 || (fy == 0.0 && fx < 0.0) { -1.0 } else { 1.0 };
        SpectralPeak {
            fx: s * fx,
            fy: s * fy,
            magnitude: m,
        }
    };

    let first = refine(&candidates[0]);
    let mut closest_separation = 0.0f64;
    let mut second = None;
    for cand in &candidates[1..] {
        let p = refine(cand);
        let d = (p.angle() - first.angle()).abs();
        let sep = d.min(PI - d);
        if (sep - PI / 2.0).abs() < (closest_separation - PI / 2.0).abs() {
            closest_separation = sep;
        }
        let fr = p.norm() / first.norm();
        if (sep - PI / 2.0).abs() <= ORTHOGONALITY_TOLERANCE
            && fr <= MAX_FREQUENCY_RATIO
            && fr >= 1.0 / MAX_FREQUENCY_RATIO
        {
            second = Some(p);
            break;
        }
    }
    let second = second.ok_or(Error::NonOrthogonalLattice {
        separation: closest_separation,
    })?;
    Ok(if first.angle() <= second.angle() {
        (first, second)
    } else {
        (second, first)
    })
}
