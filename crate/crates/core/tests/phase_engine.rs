use std::f64::consts::PI;

use dotphase::image::{degrade, ImageGray, SensorSpec};
use dotphase::pattern::{render, DotLayout, RenderPose};
use dotphase::phase::{
    analyze, fit_phase_plane, forward_spectrum, gaussian_bandpass, wrap_angle, wrapped_phase,
    AnalysisConfig, PhaseResult,
};
use dotphase::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SIZE: usize = 192;

fn lattice() -> DotLayout {
    DotLayout::new(70, 70, 1.0, 0.5).unwrap()
}

fn scene(tx: f64, ty: f64, theta: f64, ppp: f64) -> ImageGray {
    render(&lattice(), &RenderPose::new(tx, ty, theta, ppp), SIZE, SIZE).unwrap()
}

fn run(img: &ImageGray) -> PhaseResult {
    analyze(img, &AnalysisConfig::default()).unwrap()
}

/// Pixel offset, in lattice-frame components, between the node the planes
/// place nearest the frame center and the true rendered node.
fn center_node_error(r: &PhaseResult, pose: &RenderPose, layout: &DotLayout, size: usize) -> (f64, f64) {
    let c = (size as f64 - 1.0) / 2.0;
    let u = (r.plane1.eval(c, c) / (2.0 * PI)).round();
    let v = (r.plane2.eval(c, c) / (2.0 * PI)).round();
    let (qx, qy) = r.node_position(u, v);
    let (mx, my) = layout.center();
    let du = (qx - c) / pose.pixels_per_period - pose.tx;
    let dv = (qy - c) / pose.pixels_per_period - pose.ty;
    let (s, co) = pose.theta.sin_cos();
    let lx = mx + co * du + s * dv;
    let ly = my - s * du + co * dv;
    (
        (lx - lx.round()) * pose.pixels_per_period,
        (ly - ly.round()) * pose.pixels_per_period,
    )
}

#[test]
fn spectrum_is_conjugate_symmetric() {
    let img = scene(0.3, 0.1, 0.2, 9.0);
    let spec = forward_spectrum(&img, true).unwrap();
    let (w, h) = (spec.width(), spec.height());
    for (kx, ky) in [(3, 5), (17, 0), (40, 121), (100, 7)] {
        let a = spec.get(kx, ky);
        let b = spec.get((w - kx) % w, (h - ky) % h);
        assert!((a - b.conj()).norm() < 1e-8 * (1.0 + a.norm()));
    }
}

#[test]
fn one_pixel_shift_moves_phase_by_one_period_fraction() {
    let ppp = 10.0;
    let a = scene(0.0, 0.0, 0.0, ppp);
    let b = scene(1.0 / ppp, 0.0, 0.0, ppp);
    let spec_a = forward_spectrum(&a, false).unwrap();
    let spec_b = forward_spectrum(&b, false).unwrap();
    let (p1, p2) =
        dotphase::phase::find_lattice_peaks(&forward_spectrum(&a, true).unwrap(), None).unwrap();
    let peak = if p1.fx.abs() > p2.fx.abs() { p1 } else { p2 };
    let sigma = peak.norm() / 6.0;
    let ma = wrapped_phase(&gaussian_bandpass(&spec_a, &peak, sigma));
    let mb = wrapped_phase(&gaussian_bandpass(&spec_b, &peak, sigma));
    let expect = -2.0 * PI * peak.fx;
    for y in 60..130 {
        for x in 60..130 {
            let i = y * SIZE + x;
            let d = wrap_angle(mb.phase[i] - ma.phase[i]);
            assert!((d - expect).abs() < 0.02, "({x},{y}) {d} vs {expect}");
        }
    }
}

#[test]
fn quarter_period_translation_changes_constant() {
    let theta = 0.05;
    let r0 = run(&scene(0.0, 0.0, theta, 10.0));
    // shift the content a quarter period along lattice axis 1
    let r1 = run(&scene(0.25 * theta.cos(), 0.25 * theta.sin(), theta, 10.0));
    let dc = wrap_angle(r1.plane1.c - r0.plane1.c);
    assert!((dc + 2.0 * PI * 0.25).abs() < 0.01, "dc = {dc}");
}

#[test]
fn constant_derivative_matches_lattice_frequency() {
    let h = 0.1;
    let rp = run(&scene(h, 0.0, 0.05, 10.0));
    let rm = run(&scene(-h, 0.0, 0.05, 10.0));
    // tx in periods; d c / d tx along x = -2 pi cos(theta) for plane 1
    let slope = wrap_angle(rp.plane1.c - rm.plane1.c) / (2.0 * h);
    let expect = -2.0 * PI * 0.05f64.cos();
    assert!((slope - expect).abs() / expect.abs() < 0.01, "{slope} vs {expect}");
}

#[test]
fn period_and_orientation_of_rendered_lattice() {
    let r = run(&scene(0.17, -0.33, 0.1, 10.0));
    assert!((r.period_px - 10.0).abs() < 0.05, "{}", r.period_px);
    assert!((r.orientation - 0.1).abs() < 0.001, "{}", r.orientation);
    let g1 = r.plane1.gradient_norm();
    let g2 = r.plane2.gradient_norm();
    let cos = (r.plane1.a * r.plane2.a + r.plane1.b * r.plane2.b) / (g1 * g2);
    assert!(cos.abs() < 0.05f64.sin());
    assert!((g1 - g2).abs() / g1 < 0.02);
}

#[test]
fn quarter_turned_image_folds_to_same_orientation() {
    let img = scene(0.21, 0.08, 0.12, 9.0);
    let turned = img.rotate_quarter();
    let a = run(&img);
    let b = run(&turned);
    assert!((a.period_px - b.period_px).abs() < 1e-3);
    assert!((a.orientation - b.orientation).abs() < 1e-3, "{} {}", a.orientation, b.orientation);
}

#[test]
fn defocused_lattice_still_analyzed() {
    let sensor = SensorSpec {
        bit_depth: 16,
        gaussian_noise_sigma: 0.0,
        blur_sigma: 1.0,
    };
    let img = degrade(&scene(0.4, 0.1, 0.07, 10.0), &sensor, 0).unwrap();
    let r = run(&img);
    assert!((r.orientation - 0.07).abs() < 0.005);
}

#[test]
fn blank_image_has_no_lattice() {
    let img = ImageGray::filled(128, 128, 0.3);
    assert!(matches!(
        analyze(&img, &AnalysisConfig::default()),
        Err(Error::NoLatticeFound { .. })
    ));
}

#[test]
fn exact_plane_fit_on_rendered_phase() {
    let img = scene(0.0, 0.0, 0.3, 8.0);
    let spec = forward_spectrum(&img, true).unwrap();
    let (p1, _) = dotphase::phase::find_lattice_peaks(&spec, None).unwrap();
    let map = wrapped_phase(&gaussian_bandpass(&spec, &p1, p1.norm() / 6.0));
    let plane = fit_phase_plane(&map, &p1).unwrap();
    assert!((plane.period_px() - 8.0).abs() < 0.01);
    assert!(plane.rms_residual < 0.05);
}

#[test]
fn sub_pixel_translation_resolution() {
    // 19.2 periods across the frame at 10 px per period
    let layout = lattice();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut errs = Vec::new();
    for _ in 0..20 {
        let pose = RenderPose::new(
            rng.random_range(-0.5..0.5),
            rng.random_range(-0.5..0.5),
            rng.random_range(-0.3..0.3),
            10.0,
        );
        let img = render(&layout, &pose, SIZE, SIZE).unwrap();
        let (ex, ey) = center_node_error(&run(&img), &pose, &layout, SIZE);
        errs.push(ex);
        errs.push(ey);
    }
    let mean = errs.iter().sum::<f64>() / errs.len() as f64;
    let std = (errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / errs.len() as f64).sqrt();
    assert!(std < 0.005, "std {std}");
    assert!(mean.abs() < 0.002, "bias {mean}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn translation_equivariance(dx in -3.0f64..3.0, dy in -3.0f64..3.0, theta in -0.3f64..0.3) {
        let ppp = 9.5;
        let r0 = run(&scene(0.0, 0.0, theta, ppp));
        let r1 = run(&scene(dx / ppp, dy / ppp, theta, ppp));
        for (p0, p1) in [(r0.plane1, r1.plane1), (r0.plane2, r1.plane2)] {
            let expect = wrap_angle(p0.c - p0.a * dx - p0.b * dy);
            prop_assert!(wrap_angle(p1.c - expect).abs() < 0.02);
            prop_assert!((p1.a - p0.a).abs() < 1e-3 && (p1.b - p0.b).abs() < 1e-3);
        }
    }

    #[test]
    fn planes_form_a_right_handed_pair(theta in -0.02f64..0.02, flip in 0usize..4) {
        let th = theta + flip as f64 * PI / 2.0;
        let r = run(&scene(0.3, -0.1, th, 10.0));
        let cross = r.plane1.a * r.plane2.b - r.plane1.b * r.plane2.a;
        prop_assert!(cross > 0.0);
        prop_assert!(r.peak1.fy >= 0.0 && r.peak2.fy >= 0.0);
    }

    #[test]
    fn rotation_equivariance(alpha in -0.2f64..0.2) {
        let base = 0.02;
        let r0 = run(&scene(0.1, 0.2, base, 10.0));
        let r1 = run(&scene(0.1, 0.2, base + alpha, 10.0));
        let d = dotphase::phase::fold_quarter(r1.orientation - r0.orientation);
        prop_assert!((d - alpha).abs() < 2e-3, "{} vs {}", d, alpha);
    }
}
