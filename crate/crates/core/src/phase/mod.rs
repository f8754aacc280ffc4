//! Fine relative measurement of a dot lattice.
//!
//! The image is transformed to the frequency domain, the two lattice lobes
//! are located and isolated with Gaussian band-pass filters, and each
//! filtered lobe is brought back to the pixel domain as a wrapped phase map.
//! A weighted least-squares plane through each unwrapped map gives the
//! lattice pitch, orientation and sub-pixel offset.
//!
//! Phase convention: for a lobe at frequency `f`, the fitted plane is
//! `phi(q) = 2 pi f . (q - q0)` where `q0` is the pixel position of any
//! lattice node (dot center). Translating the image content by `d` pixels
//! therefore changes the plane constant by `-2 pi f . d`.

mod fft;
mod peaks;
mod plane;

use std::f64::consts::PI;
use std::time::Instant;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageGray;

pub use peaks::find_lattice_peaks;
pub use plane::{fit_phase_plane, fit_phase_plane_masked};

/// Minimum image side accepted by the transform.
pub const MIN_SIDE: usize = 32;

/// Complex spectrum, DC at index `(0, 0)`, row-major.
#[derive(Debug, Clone)]
pub struct Spectrum {
    width: usize,
    height: usize,
    data: Vec<Complex64>,
}

impl Spectrum {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, kx: usize, ky: usize) -> Complex64 {
        self.data[ky * self.width + kx]
    }

    /// Signed frequency of bin `(kx, ky)` in cycles per pixel.
    #[inline]
    pub fn frequency(&self, kx: usize, ky: usize) -> (f64, f64) {
        (
            fft::bin_frequency(kx, self.width),
            fft::bin_frequency(ky, self.height),
        )
    }
}

/// Lobe position in cycles per pixel, refined below bin resolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralPeak {
    pub fx: f64,
    pub fy: f64,
    pub magnitude: f64,
}

impl SpectralPeak {
    pub fn norm(&self) -> f64 {
        self.fx.hypot(self.fy)
    }

    /// Polar angle of the peak in `[0, pi)`.
    pub fn angle(&self) -> f64 {
        let a = self.fy.atan2(self.fx);
        if a < 0.0 {
            a + PI
        } else if a >= PI {
            a - PI
        } else {
            a
        }
    }
}

#[derive(Debug, Clone)]
pub struct WrappedPhaseMap {
    pub width: usize,
    pub height: usize,
    /// Values in `(-pi, pi]`.
    pub phase: Vec<f64>,
    pub amplitude: Vec<f64>,
}

/// `phi(x, y) = a x + b y + c` in radians, pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhasePlane {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub rms_residual: f64,
}

impl PhasePlane {
    #[inline]
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        self.a * x + self.b * y + self.c
    }

    pub fn gradient_norm(&self) -> f64 {
        self.a.hypot(self.b)
    }

    /// Lattice period along the gradient, in pixels.
    pub fn period_px(&self) -> f64 {
        2.0 * PI / self.gradient_norm()
    }

    /// Converts a plane fitted in a sub-frame whose origin sits at pixel
    /// `(dx, dy)` of the full frame into full-frame coordinates.
    pub fn shifted(&self, dx: f64, dy: f64) -> PhasePlane {
        PhasePlane {
            c: self.c - self.a * dx - self.b * dy,
            ..*self
        }
    }

    pub fn negated(&self) -> PhasePlane {
        PhasePlane {
            a: -self.a,
            b: -self.b,
            c: -self.c,
            ..*self
        }
    }
}

/// Wraps an angle into `(-pi, pi]`.
#[inline]
pub fn wrap_angle(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let r = a - 2.0 * PI * (a / (2.0 * PI)).round();
    if r <= -PI {
        r + 2.0 * PI
    } else if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

/// Folds an angle into `(-pi/4, pi/4]`.
pub fn fold_quarter(a: f64) -> f64 {
    let q = PI / 2.0;
    let mut r = a - q * (a / q).round();
    if r <= -PI / 4.0 {
        r += q;
    }
    if r > PI / 4.0 {
        r -= q;
    }
    r
}

/// Wall-clock time spent in each pipeline stage, in milliseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub spectrum_ms: f64,
    pub filter_ms: f64,
    pub fit_ms: f64,
    pub decode_ms: f64,
    pub detect_ms: f64,
}

impl StageTimings {
    pub fn total_ms(&self) -> f64 {
        self.spectrum_ms + self.filter_ms + self.fit_ms + self.decode_ms + self.detect_ms
    }

    pub fn accumulate(&mut self, other: &StageTimings) {
        self.spectrum_ms += other.spectrum_ms;
        self.filter_ms += other.filter_ms;
        self.fit_ms += other.fit_ms;
        self.decode_ms += other.decode_ms;
        self.detect_ms += other.detect_ms;
    }
}

pub(crate) fn elapsed_ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Hann window before the transform.
    pub apodize: bool,
    /// Band-pass width as a fraction of the lobe frequency.
    pub sigma_f_ratio: f64,
    /// Accepted lattice period range in pixels.
    pub period_hint_px: Option<(f64, f64)>,
    /// Pixels closer than this many periods to the frame edge are left out
    /// of the plane fit (unapodized images only).
    pub border_periods: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            apodize: false,
            sigma_f_ratio: 1.0 / 6.0,
            period_hint_px: None,
            border_periods: 3.0,
        }
    }
}

impl AnalysisConfig {
    pub fn apodized() -> Self {
        Self {
            apodize: true,
            border_periods: 0.0,
            ..Self::default()
        }
    }
}

/// Outcome of [`analyze`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhaseResult {
    pub plane1: PhasePlane,
    pub plane2: PhasePlane,
    pub peak1: SpectralPeak,
    pub peak2: SpectralPeak,
    pub period_px: f64,
    /// Lattice orientation folded into `(-pi/4, pi/4]`.
    pub orientation: f64,
    /// Pixels that carried weight in the plane fits.
    pub pixels_used: usize,
    pub timings: StageTimings,
}

impl PhaseResult {
    /// Pixel position where `plane1 = 2 pi u` and `plane2 = 2 pi v`.
    pub fn node_position(&self, u: f64, v: f64) -> (f64, f64) {
        solve_planes(&self.plane1, &self.plane2, 2.0 * PI * u, 2.0 * PI * v)
    }

    /// Result of a crop at offset `(dx, dy)` expressed in full-frame pixels.
    pub fn shifted(&self, dx: f64, dy: f64) -> PhaseResult {
        PhaseResult {
            plane1: self.plane1.shifted(dx, dy),
            plane2: self.plane2.shifted(dx, dy),
            ..self.clone()
        }
    }
}

/// Solves `p1(x, y) = t1`, `p2(x, y) = t2`.
pub fn solve_planes(p1: &PhasePlane, p2: &PhasePlane, t1: f64, t2: f64) -> (f64, f64) {
    let det = p1.a * p2.b - p1.b * p2.a;
    let r1 = t1 - p1.c;
    let r2 = t2 - p2.c;
    ((r1 * p2.b - p1.b * r2) / det, (p1.a * r2 - r1 * p2.a) / det)
}

/// Separable raised-cosine window value at sample `i` of `n`.
#[inline]
fn hann(i: usize, n: usize) -> f64 {
    0.5 - 0.5 * (2.0 * PI * (i as f64 + 0.5) / n as f64).cos()
}

fn hann_mean(img: &ImageGray) -> f64 {
    let (w, h) = (img.width(), img.height());
    let wx: Vec<f64> = (0..w).map(|i| hann(i, w)).collect();
    let (mut num, mut den) = (0.0, 0.0);
    for y in 0..h {
        let wy = hann(y, h);
        for (x, v) in img.row(y).iter().enumerate() {
            num += wx[x] * wy * v;
            den += wx[x] * wy;
        }
    }
    num / den
}

/// Windowed spectrum from the unwindowed one. The window occupies three
/// bins per axis, so this is a separable 3-tap convolution; `mean_shift`
/// (plain mean minus windowed mean) restores the windowed-mean removal.
fn window_spectrum(plain: &Spectrum, mean_shift: f64) -> Spectrum {
    let (w, h) = (plain.width, plain.height);
    let tap = |n: usize| Complex64::from_polar(0.25, PI / n as f64);
    let (tx, ty) = (tap(w), tap(h));
    let mut rows = vec![Complex64::default(); w * h];
    for y in 0..h {
        let src = &plain.data[y * w..(y + 1) * w];
        let dst = &mut rows[y * w..(y + 1) * w];
        for k in 0..w {
            dst[k] = 0.5 * src[k] - tx * src[(k + w - 1) % w] - tx.conj() * src[(k + 1) % w];
        }
    }
    let mut data = vec![Complex64::default(); w * h];
    for k in 0..h {
        let (prev, next) = ((k + h - 1) % h * w, (k + 1) % h * w);
        for x in 0..w {
            data[k * w + x] = 0.5 * rows[k * w + x] - ty * rows[prev + x] - ty.conj() * rows[next + x];
        }
    }
    let axis = |n: usize, t: Complex64| [(0, Complex64::new(0.5 * n as f64, 0.0)), (1, -(n as f64) * t), (n - 1, -(n as f64) * t.conj())];
    for (ky, wy) in axis(h, ty) {
        for (kx, wx) in axis(w, tx) {
            data[ky * w + kx] += mean_shift * wx * wy;
        }
    }
    Spectrum {
        width: w,
        height: h,
        data,
    }
}

/// Unnormalized DFT of the zero-mean (optionally Hann-windowed) image. The
/// window-weighted mean is removed so the DC bin is exactly zero.
pub fn forward_spectrum(img: &ImageGray, apodize: bool) -> Result<Spectrum> {
    let (w, h) = (img.width(), img.height());
    if w < MIN_SIDE || h < MIN_SIDE {
        return Err(Error::InvalidArgument(format!(
            "image {w}x{h} smaller than {MIN_SIDE}x{MIN_SIDE}"
        )));
    }
    let (wx, wy): (Vec<f64>, Vec<f64>) = if apodize {
        ((0..w).map(|i| hann(i, w)).collect(), (0..h).map(|i| hann(i, h)).collect())
    } else {
        (vec![1.0; w], vec![1.0; h])
    };
    let mut num = 0.0;
    let mut den = 0.0;
    for y in 0..h {
        let row = img.row(y);
        for x in 0..w {
            let win = wx[x] * wy[y];
            num += win * row[x];
            den += win;
        }
    }
    let mean = num / den;
    let mut data = Vec::with_capacity(w * h);
    for y in 0..h {
        let row = img.row(y);
        for x in 0..w {
            data.push(Complex64::new((row[x] - mean) * wx[x] * wy[y], 0.0));
        }
    }
    fft::forward_2d(&mut data, w, h);
    Ok(Spectrum {
        width: w,
        height: h,
        data,
    })
}

/// Multiplies the spectrum by `exp(-|f - f_peak|^2 / (2 sigma_f^2))`,
/// keeping only the lobe at `f_peak`. Bins further than 8 sigma from the
/// center are set to zero.
pub fn gaussian_bandpass(spec: &Spectrum, peak: &SpectralPeak, sigma_f: f64) -> Spectrum {
    let (w, h) = (spec.width, spec.height);
    let mut data = vec![Complex64::default(); w * h];
    let reach = 8.0 * sigma_f;
    let kx_lo = ((peak.fx - reach) * w as f64).floor() as i64;
    let kx_hi = ((peak.fx + reach) * w as f64).ceil() as i64;
    let ky_lo = ((peak.fy - reach) * h as f64).floor() as i64;
    let ky_hi = ((peak.fy + reach) * h as f64).ceil() as i64;
    let inv = 1.0 / (2.0 * sigma_f * sigma_f);
    // a box wider than the frame would alias onto itself
    let kx_hi = kx_hi.min(kx_lo + w as i64 - 1);
    let ky_hi = ky_hi.min(ky_lo + h as i64 - 1);
    for ky in ky_lo..=ky_hi {
        let fy = ky as f64 / h as f64;
        let iy = ky.rem_euclid(h as i64) as usize;
        for kx in kx_lo..=kx_hi {
            let fx = kx as f64 / w as f64;
            let ix = kx.rem_euclid(w as i64) as usize;
            let d2 = (fx - peak.fx).powi(2) + (fy - peak.fy).powi(2);
            data[iy * w + ix] = spec.data[iy * w + ix] * (-d2 * inv).exp();
        }
    }
    Spectrum {
        width: w,
        height: h,
        data,
    }
}

/// Inverse transform of a single-lobe spectrum: per-pixel argument and modulus.
pub fn wrapped_phase(filtered: &Spectrum) -> WrappedPhaseMap {
    let (w, h) = (filtered.width, filtered.height);
    let mut data = filtered.data.clone();
    fft::inverse_2d(&mut data, w, h);
    let mut phase = Vec::with_capacity(w * h);
    let mut amplitude = Vec::with_capacity(w * h);
    for z in &data {
        phase.push(z.im.atan2(z.re));
        amplitude.push(z.norm_sqr().sqrt());
    }
    WrappedPhaseMap {
        width: w,
        height: h,
        phase,
        amplitude,
    }
}

/// Spectrum, lobe detection, filtering and plane fitting for both lattice axes.
pub fn analyze(img: &ImageGray, config: &AnalysisConfig) -> Result<PhaseResult> {
    analyze_masked(img, config, None)
}

/// As [`analyze`], with the plane fits restricted to pixels where `mask` is
/// true. The lobe search still sees the whole frame.
pub fn analyze_masked(img: &ImageGray, config: &AnalysisConfig, mask: Option<&[bool]>) -> Result<PhaseResult> {
    if let Some(m) = mask {
        if m.len() != img.width() * img.height() {
            return Err(Error::InvalidArgument(format!(
                "mask has {} entries for a {}x{} image",
                m.len(),
                img.width(),
                img.height()
            )));
        }
    }
    let mut timings = StageTimings::default();
    let t = Instant::now();
    // Lobes are always located on the windowed spectrum: without the window,
    // leakage can push an off-bin fundamental below the diagonal harmonic.
    let (spec, windowed) = if config.apodize {
        (None, forward_spectrum(img, true)?)
    } else {
        let plain = forward_spectrum(img, false)?;
        let windowed = window_spectrum(&plain, img.mean() - hann_mean(img));
        (Some(plain), windowed)
    };
    let (peak1, peak2) = find_lattice_peaks(&windowed, config.period_hint_px)?;
    let spec = spec.unwrap_or(windowed);
    timings.spectrum_ms = elapsed_ms(t);

    let mut planes = Vec::with_capacity(2);
    let mut used = 0;
    for peak in [&peak1, &peak2] {
        let margin = if config.apodize {
            0
        } else {
            (config.border_periods / peak.norm()).round() as usize
        };
        let t = Instant::now();
        let filtered = gaussian_bandpass(&spec, peak, config.sigma_f_ratio * peak.norm());
        let map = wrapped_phase(&filtered);
        timings.filter_ms += elapsed_ms(t);

        let t = Instant::now();
        let (plane, n) = plane::fit_with_margin(&map, peak, margin, mask)?;
        timings.fit_ms += elapsed_ms(t);
        used = used.max(n);
        planes.push(plane);
    }
    let (plane1, plane2) = (planes[0], planes[1]);

    let g1 = plane1.gradient_norm();
    let g2 = plane2.gradient_norm();
    let cos = (plane1.a * plane2.a + plane1.b * plane2.b) / (g1 * g2);
    let separation = cos.clamp(-1.0, 1.0).acos();
    if (separation - PI / 2.0).abs() > 0.05 {
        return Err(Error::NonOrthogonalLattice { separation });
    }
    let (p1, p2) = (plane1.period_px(), plane2.period_px());
    if (p1 - p2).abs() / p1.min(p2) > 0.02 {
        return Err(Error::NonOrthogonalLattice { separation });
    }
    Ok(PhaseResult {
        plane1,
        plane2,
        peak1,
        peak2,
        period_px: 0.5 * (p1 + p2),
        orientation: fold_quarter(plane1.b.atan2(plane1.a)),
        pixels_used: used,
        timings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_and_fold() {
        assert!((wrap_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(0.5) - 0.5).abs() < 1e-12);
        assert!((fold_quarter(PI / 2.0 + 0.1) - 0.1).abs() < 1e-12);
        assert!((fold_quarter(-PI / 4.0) - PI / 4.0).abs() < 1e-12);
        assert!((fold_quarter(PI / 4.0) - PI / 4.0).abs() < 1e-12);
        assert!((fold_quarter(PI - 0.2) + 0.2).abs() < 1e-12);
    }

    #[test]
    fn constant_image_has_empty_spectrum() {
        let img = ImageGray::filled(40, 36, 0.7);
        for apodize in [false, true] {
            let spec = forward_spectrum(&img, apodize).unwrap();
            assert!(spec.data().iter().all(|z| z.norm() < 1e-9));
        }
    }

    #[test]
    fn cosine_lands_on_expected_bin() {
        let img = ImageGray::from_fn(256, 256, |x, _| 0.5 + 0.4 * (2.0 * PI * x as f64 / 8.0).cos());
        let spec = forward_spectrum(&img, false).unwrap();
        let (mut best, mut arg) = (0.0, (0, 0));
        for ky in 0..256 {
            for kx in 0..256 {
                if (kx, ky) != (0, 0) && spec.get(kx, ky).norm() > best && kx <= 128 {
                    best = spec.get(kx, ky).norm();
                    arg = (kx, ky);
                }
            }
        }
        assert_eq!(arg, (32, 0));
    }

    #[test]
    fn parseval() {
        let img = ImageGray::from_fn(48, 40, |x, y| ((x * 31 + y * 17) % 23) as f64 / 23.0);
        let spec = forward_spectrum(&img, false).unwrap();
        let mean = img.mean();
        let energy: f64 = img.data().iter().map(|v| (v - mean).powi(2)).sum();
        let spectral: f64 = spec.data().iter().map(|z| z.norm_sqr()).sum();
        let n = (48 * 40) as f64;
        assert!((spectral - n * energy).abs() / (n * energy) < 1e-6);
    }

    #[test]
    fn window_from_plain_spectrum() {
        let img = ImageGray::from_fn(45, 38, |x, y| ((x * 13 + y * 7) % 11) as f64 / 11.0 + 0.01 * y as f64);
        let direct = forward_spectrum(&img, true).unwrap();
        let plain = forward_spectrum(&img, false).unwrap();
        let derived = window_spectrum(&plain, img.mean() - hann_mean(&img));
        let scale = direct.data().iter().map(|z| z.norm()).fold(0.0, f64::max);
        for (a, b) in direct.data().iter().zip(derived.data()) {
            assert!((a - b).norm() < 1e-12 * scale, "{a} {b}");
        }
    }

    #[test]
    fn too_small_rejected() {
        assert!(forward_spectrum(&ImageGray::new(31, 64), false).is_err());
    }

    #[test]
    fn bandpass_gain() {
        let (w, h) = (64, 64);
        let spec = Spectrum {
            width: w,
            height: h,
            data: vec![Complex64::new(1.0, 0.5); w * h],
        };
        let peak = SpectralPeak {
            fx: 8.0 / 64.0,
            fy: 0.0,
            magnitude: 1.0,
        };
        let sigma = peak.norm() / 6.0;
        let out = gaussian_bandpass(&spec, &peak, sigma);
        // unit gain at the center
        assert_eq!(out.get(8, 0), Complex64::new(1.0, 0.5));
        // conjugate lobe
        assert!(out.get(56, 0).norm() < 1e-6 * spec.get(56, 0).norm());
        // DC follows the Gaussian formula (or is truncated to zero)
        let expect = (-(peak.norm().powi(2)) / (2.0 * sigma * sigma)).exp();
        assert!((out.get(0, 0).norm() / spec.get(0, 0).norm() - expect).abs() < 1e-9);
        assert!(expect < 1e-7);
    }

    #[test]
    fn analytic_signal_of_filtered_cosine() {
        let img = ImageGray::from_fn(200, 120, |x, _| 0.5 + 0.5 * (2.0 * PI * x as f64 / 10.0).cos());
        let spec = forward_spectrum(&img, false).unwrap();
        let peak = SpectralPeak {
            fx: 0.1,
            fy: 0.0,
            magnitude: 0.0,
        };
        let map = wrapped_phase(&gaussian_bandpass(&spec, &peak, 0.1 / 6.0));
        let amp0 = map.amplitude[60 * 200 + 100];
        for y in 20..100 {
            for x in 20..180 {
                let i = y * 200 + x;
                let expect = wrap_angle(2.0 * PI * x as f64 / 10.0);
                assert!(wrap_angle(map.phase[i] - expect).abs() < 1e-6);
                assert!((map.amplitude[i] - amp0).abs() / amp0 < 0.01);
            }
        }
        assert!((amp0 - 0.25).abs() < 1e-6);
    }

    #[test]
    fn solve_planes_inverts() {
        let p1 = PhasePlane { a: 0.6, b: 0.1, c: 0.3, rms_residual: 0.0 };
        let p2 = PhasePlane { a: -0.1, b: 0.6, c: -1.0, rms_residual: 0.0 };
        let (x, y) = solve_planes(&p1, &p2, 2.0, 5.0);
        assert!((p1.eval(x, y) - 2.0).abs() < 1e-12);
        assert!((p2.eval(x, y) - 5.0).abs() < 1e-12);
        let s = p1.shifted(10.0, -4.0);
        assert!((s.eval(3.0, 3.0) - p1.eval(-7.0, 7.0)).abs() < 1e-12);
    }
}
