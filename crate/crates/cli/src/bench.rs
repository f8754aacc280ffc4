//! Resolution and robustness sweeps over rendered scenes.
//!
//! Every repetition draws from its own ChaCha stream keyed by grid point
//! and repetition index, so results do not depend on the thread count or
//! scheduling. Only the latency column varies between runs.

use std::fmt::Write as _;
use std::time::Instant;

use dotphase::decode::MegarenaDecoder;
use dotphase::image::{degrade, SensorSpec};
use dotphase::marker::{detect_markers, estimate_small_marker};
use dotphase::pattern::{render, DotLayout, RenderPose, SmallMarkerGeometry};
use dotphase::phase::AnalysisConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{JobConfig, MarkerConfig};
use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub kind: String,
    pub periods: usize,
    pub noise: f64,
    pub blur: f64,
    pub repetitions: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub mean_x_px: f64,
    pub mean_y_px: f64,
    pub std_x_px: f64,
    pub std_y_px: f64,
    pub std_x_periods: f64,
    pub std_y_periods: f64,
    pub std_theta_mrad: f64,
    pub mean_latency_ms: f64,
}

pub const BENCH_CSV_HEADER: &str = "kind,periods,noise,blur,repetitions,successes,success_rate,\
mean_x_px,mean_y_px,std_x_px,std_y_px,std_x_periods,std_y_periods,std_theta_mrad,mean_latency_ms";

#[derive(Debug, Clone, Copy)]
struct GridPoint {
    periods: usize,
    noise: f64,
    blur: f64,
}

/// Errors in periods and radians, or `None` on a failed estimate.
#[derive(Debug, Clone, Copy)]
struct Trial {
    error: Option<(f64, f64, f64)>,
    latency_ms: f64,
}

enum Target {
    Megarena {
        layout: DotLayout,
        decoder: MegarenaDecoder,
        period: f64,
        analysis: AnalysisConfig,
    },
    Small {
        layout: DotLayout,
        geom: SmallMarkerGeometry,
    },
}

fn sorted_grid(cfg: &JobConfig) -> Vec<GridPoint> {
    let b = &cfg.bench;
    let mut periods = b.periods.clone();
    periods.sort_unstable();
    periods.dedup();
    let sorted = |v: &[f64]| {
        let mut v = v.to_vec();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    };
    let (noise, blur) = (sorted(&b.noise), sorted(&b.blur));
    let mut grid = Vec::new();
    for &p in &periods {
        for &n in &noise {
            for &bl in &blur {
                grid.push(GridPoint { periods: p, noise: n, blur: bl });
            }
        }
    }
    grid
}

fn target(cfg: &JobConfig, periods: usize) -> Result<Target, CliError> {
    Ok(match &cfg.marker {
        MarkerConfig::Megarena(m) => {
            let spec = m.spec()?;
            Target::Megarena {
                layout: dotphase::pattern::layout_megarena(&spec)?,
                decoder: MegarenaDecoder::new(&spec)?,
                period: m.period,
                analysis: cfg.analysis.analysis_config(),
            }
        }
        marker => {
            let (layout, geom) = marker.with_periods(periods).layout()?;
            Target::Small {
                layout,
                geom: geom.expect("small markers carry a geometry"),
            }
        }
    })
}

fn wrap(a: f64) -> f64 {
    let r = a.rem_euclid(2.0 * std::f64::consts::PI);
    if r > std::f64::consts::PI {
        r - 2.0 * std::f64::consts::PI
    } else {
        r
    }
}

fn trial(cfg: &JobConfig, target: &Target, point: GridPoint, rng: &mut ChaCha8Rng) -> Trial {
    let b = &cfg.bench;
    let ppp = b.pixels_per_period;
    let theta = if b.max_theta > 0.0 {
        rng.random_range(-b.max_theta..=b.max_theta)
    } else {
        0.0
    };
    let sensor = SensorSpec {
        bit_depth: 16,
        gaussian_noise_sigma: point.noise,
        blur_sigma: point.blur,
    };
    let noise_seed: u64 = rng.random();
    let failed = |t: Instant| Trial {
        error: None,
        latency_ms: t.elapsed().as_secs_f64() * 1e3,
    };
    match target {
        Target::Megarena { layout, decoder, period, analysis } => {
            let side = (point.periods as f64 * ppp).round() as usize;
            let margin = 0.75 * point.periods as f64 + 2.0;
            let hi = layout.cols().min(layout.rows()) as f64 - margin;
            if hi <= margin {
                return Trial { error: None, latency_ms: 0.0 };
            }
            let (x, y) = (rng.random_range(margin..hi), rng.random_range(margin..hi));
            let pose = RenderPose::viewing(layout, x, y, theta, ppp);
            let Ok(img) = render(layout, &pose, side, side).and_then(|i| degrade(&i, &sensor, noise_seed))
            else {
                return Trial { error: None, latency_ms: 0.0 };
            };
            let t = Instant::now();
            match decoder.estimate(&img, analysis) {
                Ok(e) => Trial {
                    error: Some((e.pose.x / period - x, e.pose.y / period - y, wrap(e.pose.theta - theta))),
                    latency_ms: t.elapsed().as_secs_f64() * 1e3,
                },
                Err(_) => failed(t),
            }
        }
        Target::Small { layout, geom } => {
            let n = point.periods as f64;
            let reach = n * (theta.cos().abs() + theta.sin().abs());
            let side = ((reach + 6.0) * ppp).ceil() as usize;
            let (tx, ty) = (rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
            let pose = RenderPose::new(tx, ty, theta, ppp);
            let Ok(img) = render(layout, &pose, side, side).and_then(|i| degrade(&i, &sensor, noise_seed))
            else {
                return Trial { error: None, latency_ms: 0.0 };
            };
            let t = Instant::now();
            let est = detect_markers(&img, geom.kind)
                .iter()
                .find_map(|r| estimate_small_marker(&img, r, geom).ok());
            match est {
                Some(e) => Trial {
                    error: Some((e.x - tx, e.y - ty, wrap(e.theta - theta))),
                    latency_ms: t.elapsed().as_secs_f64() * 1e3,
                },
                None => failed(t),
            }
        }
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return f64::NAN;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

fn reduce(cfg: &JobConfig, point: GridPoint, trials: &[Trial]) -> BenchRow {
    let ppp = cfg.bench.pixels_per_period;
    let ok: Vec<(f64, f64, f64)> = trials.iter().filter_map(|t| t.error).collect();
    let ex: Vec<f64> = ok.iter().map(|e| e.0).collect();
    let ey: Vec<f64> = ok.iter().map(|e| e.1).collect();
    let et: Vec<f64> = ok.iter().map(|e| e.2).collect();
    let reps = trials.len();
    BenchRow {
        kind: cfg.marker.name().into(),
        periods: point.periods,
        noise: point.noise,
        blur: point.blur,
        repetitions: reps,
        successes: ok.len(),
        success_rate: ok.len() as f64 / reps as f64,
        mean_x_px: mean(&ex) * ppp,
        mean_y_px: mean(&ey) * ppp,
        std_x_px: std_dev(&ex) * ppp,
        std_y_px: std_dev(&ey) * ppp,
        std_x_periods: std_dev(&ex),
        std_y_periods: std_dev(&ey),
        std_theta_mrad: std_dev(&et) * 1e3,
        mean_latency_ms: mean(&trials.iter().map(|t| t.latency_ms).collect::<Vec<_>>()),
    }
}

/// Runs the configured sweep. Grid points come out sorted by
/// `(periods, noise, blur)`; zero repetitions yield no rows.
pub fn run_bench(cfg: &JobConfig, threads: Option<usize>) -> Result<Vec<BenchRow>, CliError> {
    let reps = cfg.bench.repetitions;
    if reps == 0 {
        return Ok(Vec::new());
    }
    let grid = sorted_grid(cfg);
    let targets: Vec<Target> = grid
        .iter()
        .map(|p| target(cfg, p.periods))
        .collect::<Result<_, _>>()?;
    let jobs: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|g| (0..reps).map(move |r| (g, r)))
        .collect();
    let run = || -> Vec<Trial> {
        jobs.par_iter()
            .map(|&(g, r)| {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                rng.set_stream(((g as u64) << 32) | r as u64);
                trial(cfg, &targets[g], grid[g], &mut rng)
            })
            .collect()
    };
    let trials = match threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?
            .install(run),
        None => run(),
    };
    Ok(grid
        .iter()
        .enumerate()
        .map(|(g, &p)| reduce(cfg, p, &trials[g * reps..(g + 1) * reps]))
        .collect())
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from(BENCH_CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.kind,
            r.periods,
            r.noise,
            r.blur,
            r.repetitions,
            r.successes,
            r.success_rate,
            r.mean_x_px,
            r.mean_y_px,
            r.std_x_px,
            r.std_y_px,
            r.std_x_periods,
            r.std_y_periods,
            r.std_theta_mrad,
            r.mean_latency_ms
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use dotphase::pattern::HpCodeSpec;

    #[test]
    fn grid_is_sorted_and_deduplicated() {
        let mut cfg = JobConfig::new(MarkerConfig::Hp(HpCodeSpec::new(20, 0)));
        cfg.bench.periods = vec![25, 9, 17, 9];
        cfg.bench.noise = vec![0.02, 0.0];
        let g = sorted_grid(&cfg);
        let keys: Vec<(usize, f64)> = g.iter().map(|p| (p.periods, p.noise)).collect();
        assert_eq!(keys, vec![(9, 0.0), (9, 0.02), (17, 0.0), (17, 0.02), (25, 0.0), (25, 0.02)]);
    }

    #[test]
    fn statistics_helpers() {
        assert!(std_dev(&[1.0]).is_nan());
        assert!((std_dev(&[1.0, 3.0]) - 2f64.sqrt()).abs() < 1e-15);
        assert!((wrap(2.0 * std::f64::consts::PI - 0.1) + 0.1).abs() < 1e-12);
    }

    #[test]
    fn zero_repetitions_give_header_only() {
        let mut cfg = JobConfig::new(MarkerConfig::Hp(HpCodeSpec::new(20, 0)));
        cfg.bench.repetitions = 0;
        let rows = run_bench(&cfg, None).unwrap();
        assert_eq!(bench_csv(&rows), format!("{BENCH_CSV_HEADER}\n"));
    }
}
