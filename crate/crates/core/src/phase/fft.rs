//! Two-dimensional transforms on row-major complex buffers.

use std::cell::RefCell;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};

thread_local! {
    // plans are cached per thread; the planner itself is not shared
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(len: usize, direction: FftDirection) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft(len, direction))
}

/// In-place unnormalized 2-D transform. Rows for which `skip_row` returns
/// true are known to be all zero and are not transformed.
fn transform_2d(
    data: &mut [Complex64],
    width: usize,
    height: usize,
    direction: FftDirection,
    skip_row: impl Fn(usize) -> bool,
) {
    let row_fft = plan(width, direction);
    let mut scratch = vec![Complex64::default(); row_fft.get_inplace_scratch_len()];
    for (y, row) in data.chunks_exact_mut(width).enumerate() {
        if !skip_row(y) {
            row_fft.process_with_scratch(row, &mut scratch);
        }
    }

    let col_fft = plan(height, direction);
    let mut scratch = vec![Complex64::default(); col_fft.get_inplace_scratch_len()];
    // transform columns in blocks to keep the gather/scatter cache friendly
    const BLOCK: usize = 16;
    let mut cols = vec![Complex64::default(); BLOCK * height];
    let mut x0 = 0;
    while x0 < width {
        let bw = BLOCK.min(width - x0);
        for y in 0..height {
            let row = &data[y * width + x0..y * width + x0 + bw];
            for (b, v) in row.iter().enumerate() {
                cols[b * height + y] = *v;
            }
        }
        for b in 0..bw {
            col_fft.process_with_scratch(&mut cols[b * height..(b + 1) * height], &mut scratch);
        }
        for y in 0..height {
            let row = &mut data[y * width + x0..y * width + x0 + bw];
            for (b, v) in row.iter_mut().enumerate() {
                *v = cols[b * height + y];
            }
        }
        x0 += bw;
    }
}

pub(crate) fn forward_2d(data: &mut [Complex64], width: usize, height: usize) {
    transform_2d(data, width, height, FftDirection::Forward, |_| false);
}

/// Normalized inverse (divides by `width * height`). The row pass runs over
/// the frequency rows, so all-zero rows are skipped.
pub(crate) fn inverse_2d(data: &mut [Complex64], width: usize, height: usize) {
    let zero_rows: Vec<bool> = data
        .chunks_exact(width)
        .map(|row| row.iter().all(|v| v.re == 0.0 && v.im == 0.0))
        .collect();
    transform_2d(data, width, height, FftDirection::Inverse, |y| zero_rows[y]);
    let norm = 1.0 / (width * height) as f64;
    for v in data.iter_mut() {
        *v *= norm;
    }
}

/// Signed frequency (cycles per sample) of bin `k` in a transform of length `n`.
#[inline]
pub(crate) fn bin_frequency(k: usize, n: usize) -> f64 {
    if 2 * k <= n {
        k as f64 / n as f64
    } else {
        k as f64 / n as f64 - 1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct O(N^2) DFT used as the oracle.
    fn naive_dft(data: &[Complex64], w: usize, h: usize) -> Vec<Complex64> {
        let mut out = vec![Complex64::default(); w * h];
        for ky in 0..h {
            for kx in 0..w {
                let mut acc = Complex64::default();
                for y in 0..h {
                    for x in 0..w {
                        let ang = -2.0
                            * std::f64::consts::PI
                            * (kx as f64 * x as f64 / w as f64 + ky as f64 * y as f64 / h as f64);
                        acc += data[y * w + x] * Complex64::from_polar(1.0, ang);
                    }
                }
                out[ky * w + kx] = acc;
            }
        }
        out
    }

    #[test]
    fn matches_naive_dft_on_odd_sizes() {
        let (w, h) = (7, 5);
        let data: Vec<Complex64> = (0..w * h)
            .map(|i| Complex64::new((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()))
            .collect();
        let mut fast = data.clone();
        forward_2d(&mut fast, w, h);
        for (a, b) in fast.iter().zip(naive_dft(&data, w, h)) {
            assert!((a - b).norm() < 1e-9);
        }
        inverse_2d(&mut fast, w, h);
        for (a, b) in fast.iter().zip(&data) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn signed_bins() {
        assert_eq!(bin_frequency(0, 8), 0.0);
        assert_eq!(bin_frequency(4, 8), 0.5);
        assert_eq!(bin_frequency(5, 8), -0.375);
        assert_eq!(bin_frequency(2, 5), 0.4);
        assert_eq!(bin_frequency(3, 5), -0.4);
    }
}
