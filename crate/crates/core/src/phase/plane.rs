use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::phase::{wrap_angle, PhasePlane, SpectralPeak, WrappedPhaseMap};

/// Fits whose amplitude-weighted residual exceeds this are rejected.
const MAX_WEIGHTED_RMS: f64 = 1.0;
/// Passes of plane correction on wrapped residuals after the first fit.
const REFINE_PASSES: usize = 2;

/// Amplitude-weighted least-squares plane through the unwrapped phase.
pub fn fit_phase_plane(map: &WrappedPhaseMap, peak: &SpectralPeak) -> Result<PhasePlane> {
    fit_with_margin(map, peak, 0, None).map(|(p, _)| p)
}

/// As [`fit_phase_plane`], restricted to pixels where `mask` is true.
pub fn fit_phase_plane_masked(
    map: &WrappedPhaseMap,
    peak: &SpectralPeak,
    mask: &[bool],
) -> Result<PhasePlane> {
    if mask.len() != map.width * map.height {
        return Err(Error::InvalidArgument(format!(
            "mask has {} entries for a {}x{} map",
            mask.len(),
            map.width,
            map.height
        )));
    }
    fit_core(map, peak, |i| mask[i]).map(|(p, _)| p)
}

/// Fit leaving out a border of `margin` pixels. Also returns the number of
/// pixels that carried weight.
pub(crate) fn fit_with_margin(
    map: &WrappedPhaseMap,
    peak: &SpectralPeak,
    margin: usize,
    mask: Option<&[bool]>,
) -> Result<(PhasePlane, usize)> {
    let (w, h) = (map.width, map.height);
    // never shrink the fit region below a third of the frame
    let mx = margin.min(w / 3);
    let my = margin.min(h / 3);
    fit_core(map, peak, |i| {
        let (x, y) = (i % w, i / w);
        x >= mx && x + mx < w && y >= my && y + my < h && mask.is_none_or(|m| m[i])
    })
}

/// Weighted normal equations for `e = alpha dx + beta dy + gamma`.
#[derive(Default)]
struct Normal {
    sxx: f64,
    sxy: f64,
    sx: f64,
    syy: f64,
    sy: f64,
    s1: f64,
    ex: f64,
    ey: f64,
    e1: f64,
}

impl Normal {
    #[inline]
    fn add(&mut self, dx: f64, dy: f64, e: f64, wt: f64) {
        let (wx, wy) = (wt * dx, wt * dy);
        self.sxx += wx * dx;
        self.sxy += wx * dy;
        self.sx += wx;
        self.syy += wy * dy;
        self.sy += wy;
        self.s1 += wt;
        self.ex += wx * e;
        self.ey += wy * e;
        self.e1 += wt * e;
    }

    fn solve(self) -> Option<Vector3<f64>> {
        let m = Matrix3::new(
            self.sxx, self.sxy, self.sx, //
            self.sxy, self.syy, self.sy, //
            self.sx, self.sy, self.s1,
        );
        m.lu().solve(&Vector3::new(self.ex, self.ey, self.e1))
    }
}

fn fit_core(
    map: &WrappedPhaseMap,
    peak: &SpectralPeak,
    include: impl Fn(usize) -> bool,
) -> Result<(PhasePlane, usize)> {
    let (w, h) = (map.width, map.height);
    let (xc, yc) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let (ka, kb) = (2.0 * PI * peak.fx, 2.0 * PI * peak.fy);

    // residual after carrier removal
    let mut resid = vec![0.0; w * h];
    let mut weight = vec![0.0; w * h];
    let mut used = 0;
    for y in 0..h {
        let dy = y as f64 - yc;
        for x in 0..w {
            let i = y * w + x;
            resid[i] = wrap_angle(map.phase[i] - ka * (x as f64 - xc) - kb * dy);
            if include(i) && map.amplitude[i] > 0.0 {
                weight[i] = map.amplitude[i];
                used += 1;
            }
        }
    }
    if used < 3 {
        return Err(Error::FitDegenerate { rms: f64::INFINITY });
    }
    // The mean phasor only anchors the wrap below; the plane absorbs any
    // offset, so a sparse grid is enough on large fits.
    let mean_phasor = |step: usize| {
        let (mut sc, mut ss, mut n) = (0.0, 0.0, 0usize);
        for y in (0..h).step_by(step) {
            for x in (0..w).step_by(step) {
                let i = y * w + x;
                if weight[i] > 0.0 {
                    let (s, c) = resid[i].sin_cos();
                    sc += weight[i] * c;
                    ss += weight[i] * s;
                    n += 1;
                }
            }
        }
        (ss.atan2(sc), n)
    };
    let r0 = match mean_phasor(3) {
        (r0, n) if n >= 1000 => r0,
        _ => mean_phasor(1).0,
    };

    // With the carrier removed what is left is nearly constant, so the
    // residual wrapped about its mean phasor needs no path unwrapping (a path
    // through a low-amplitude patch would spread its 2 pi slips downstream).
    let mut normal = Normal::default();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if weight[i] > 0.0 {
                normal.add(x as f64 - xc, y as f64 - yc, wrap_angle(resid[i] - r0), weight[i]);
            }
        }
    }
    let mut coef = normal
        .solve()
        .ok_or(Error::FitDegenerate { rms: f64::INFINITY })?;
    coef[2] += r0;

    for _ in 0..REFINE_PASSES {
        let mut normal = Normal::default();
        for y in 0..h {
            let dy = y as f64 - yc;
            for x in 0..w {
                let i = y * w + x;
                if weight[i] > 0.0 {
                    let dx = x as f64 - xc;
                    let e = wrap_angle(resid[i] - coef[0] * dx - coef[1] * dy - coef[2]);
                    normal.add(dx, dy, e, weight[i]);
                }
            }
        }
        match normal.solve() {
            Some(d) => coef += d,
            None => break,
        }
    }

    // residual statistics
    let mut amps: Vec<f64> = (0..w * h)
        .filter(|&i| weight[i] > 0.0)
        .map(|i| map.amplitude[i])
        .collect();
    let mid = amps.len() / 2;
    let median_amp = *amps.select_nth_unstable_by(mid, |a, b| a.total_cmp(b)).1;
    let (mut wsum, mut wss, mut n_hi, mut ss_hi) = (0.0, 0.0, 0usize, 0.0);
    for y in 0..h {
        let dy = y as f64 - yc;
        for x in 0..w {
            let i = y * w + x;
            if weight[i] > 0.0 {
                let dx = x as f64 - xc;
                let e = wrap_angle(resid[i] - coef[0] * dx - coef[1] * dy - coef[2]);
                wsum += weight[i];
                wss += weight[i] * e * e;
                if map.amplitude[i] > median_amp {
                    n_hi += 1;
                    ss_hi += e * e;
                }
            }
        }
    }
    let weighted_rms = (wss / wsum).sqrt();
    if !(weighted_rms <= MAX_WEIGHTED_RMS) {
        return Err(Error::FitDegenerate { rms: weighted_rms });
    }
    let rms_residual = if n_hi > 0 {
        (ss_hi / n_hi as f64).sqrt()
    } else {
        weighted_rms
    };

    let a = ka + coef[0];
    let b = kb + coef[1];
    Ok((
        PhasePlane {
            a,
            b,
            c: wrap_angle(coef[2] - a * xc - b * yc),
            rms_residual,
        },
        used,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::{degrade, ImageGray, SensorSpec};
    use crate::phase::{forward_spectrum, gaussian_bandpass, wrapped_phase};

    fn carrier_map(w: usize, h: usize, fx: f64, fy: f64, c: f64) -> WrappedPhaseMap {
        let phase = (0..w * h)
            .map(|i| wrap_angle(2.0 * PI * (fx * (i % w) as f64 + fy * (i / w) as f64) + c))
            .collect();
        WrappedPhaseMap {
            width: w,
            height: h,
            phase,
            amplitude: vec![1.0; w * h],
        }
    }

    #[test]
    fn exact_carrier_recovered() {
        let (fx, fy, c) = (0.0931, -0.0217, 2.5);
        let map = carrier_map(97, 64, fx, fy, c);
        // peak deliberately off by a fraction of a bin
        let peak = SpectralPeak {
            fx: fx + 0.002,
            fy: fy - 0.001,
            magnitude: 1.0,
        };
        let p = fit_phase_plane(&map, &peak).unwrap();
        assert!((p.a - 2.0 * PI * fx).abs() < 1e-6);
        assert!((p.b - 2.0 * PI * fy).abs() < 1e-6);
        assert!(wrap_angle(p.c - c).abs() < 1e-6);
        assert!(p.rms_residual < 1e-6);
    }

    #[test]
    fn c_is_normalized() {
        let map = carrier_map(64, 64, 0.1, 0.0, -3.0);
        let p = fit_phase_plane(&map, &SpectralPeak { fx: 0.1, fy: 0.0, magnitude: 1.0 }).unwrap();
        assert!(p.c > -PI && p.c <= PI);
        assert!((p.c + 3.0).abs() < 1e-9);
    }

    #[test]
    fn mask_excludes_corrupted_pixels() {
        let mut map = carrier_map(80, 80, 0.1, 0.05, 0.4);
        let mut mask = vec![true; 80 * 80];
        for y in 0..30 {
            for x in 0..30 {
                map.phase[y * 80 + x] = ((x * 7 + y * 3) % 11) as f64 * 0.5 - 2.5;
                mask[y * 80 + x] = false;
            }
        }
        let peak = SpectralPeak { fx: 0.1, fy: 0.05, magnitude: 1.0 };
        let p = fit_phase_plane_masked(&map, &peak, &mask).unwrap();
        assert!(wrap_angle(p.c - 0.4).abs() < 1e-9);
        assert!(fit_phase_plane_masked(&map, &peak, &mask[1..]).is_err());
    }

    #[test]
    fn noise_only_fit_is_degenerate() {
        // frame much wider than the filtered noise correlation length
        let flat = ImageGray::filled(256, 256, 0.5);
        let sensor = SensorSpec {
            bit_depth: 16,
            gaussian_noise_sigma: 0.1,
            blur_sigma: 0.0,
        };
        let peak = SpectralPeak { fx: 0.1, fy: 0.02, magnitude: 1.0 };
        for seed in 0..10 {
            let img = degrade(&flat, &sensor, seed).unwrap();
            let spec = forward_spectrum(&img, false).unwrap();
            let map = wrapped_phase(&gaussian_bandpass(&spec, &peak, peak.norm() / 6.0));
            assert!(
                matches!(fit_phase_plane(&map, &peak), Err(Error::FitDegenerate { .. })),
                "seed {seed}"
            );
        }
    }

    #[test]
    fn margin_counts_pixels() {
        let map = carrier_map(60, 40, 0.1, 0.0, 0.0);
        let peak = SpectralPeak { fx: 0.1, fy: 0.0, magnitude: 1.0 };
        let (_, n) = fit_with_margin(&map, &peak, 5, None).unwrap();
        assert_eq!(n, 50 * 30);
        // margin is capped at a third of each side
        let (_, n) = fit_with_margin(&map, &peak, 100, None).unwrap();
        assert_eq!(n, (60 - 2 * 20) * (40 - 2 * 13));
    }
}
