//! The render, estimate and layout verbs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use dotphase::decode::MegarenaDecoder;
use dotphase::image::{degrade, load_image, save_image, ImageGray, SensorSpec};
use dotphase::marker::{detect_markers, estimate_small_marker, SmallMarkerEstimate};
use dotphase::pattern::{export_svg, render, render_into, render_layout_image, RenderPose};
use dotphase::phase::StageTimings;
use dotphase::pose::{normalize_angle, periods_to_physical, phase_uncertainty, relative_pose, Pose2D};
use serde::{Deserialize, Serialize};

use crate::config::{JobConfig, MarkerConfig, PlacedPose};
use crate::guidelines::{GuidelineInput, GuidelineReport};
use crate::{CliError, SCHEMA_VERSION};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderedPose {
    pub requested: PlacedPose,
    pub render_pose: RenderPose,
}

/// What `estimate` should report for one rendered marker, in its units:
/// physical for Megarena, periods from the image center for small markers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpectedPose {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub marker_id: Option<u32>,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

/// Ground truth written next to every rendered image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub schema_version: u32,
    pub kind: String,
    pub marker: MarkerConfig,
    pub width: usize,
    pub height: usize,
    pub pixels_per_period: f64,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sensor: Option<SensorSpec>,
    pub poses: Vec<RenderedPose>,
    pub expected: Vec<ExpectedPose>,
    pub guidelines: GuidelineReport,
}

fn guideline_input(marker: &MarkerConfig, ppp: f64, w: usize, h: usize) -> GuidelineInput {
    GuidelineInput {
        pixels_per_period: Some(ppp),
        marker_periods: marker.periods_across(),
        megarena: match marker {
            MarkerConfig::Megarena(m) => Some((m.n, w.min(h) as f64 / ppp)),
            _ => None,
        },
    }
}

/// Renders the configured scene; the image is degraded when a sensor is set.
pub fn render_scene(cfg: &JobConfig) -> Result<(ImageGray, Sidecar), CliError> {
    let r = &cfg.render;
    let ppp = r.pixels_per_period;
    let (w, h) = (r.width, r.height);
    let mut poses = Vec::new();
    let mut expected = Vec::new();
    let mut img = ImageGray::new(w, h);
    match &cfg.marker {
        MarkerConfig::Megarena(m) => {
            let (layout, _) = cfg.marker.layout()?;
            let requested = r.poses.first().copied().unwrap_or_else(|| {
                let (x, y) = layout.center();
                PlacedPose { x, y, theta: 0.0, marker_id: None }
            });
            let pose = RenderPose::viewing(&layout, requested.x, requested.y, requested.theta, ppp);
            img = render(&layout, &pose, w, h)?;
            poses.push(RenderedPose { requested, render_pose: pose });
            expected.push(ExpectedPose {
                marker_id: None,
                x: requested.x * m.period,
                y: requested.y * m.period,
                theta: normalize_angle(requested.theta),
            });
        }
        MarkerConfig::Hp(_) | MarkerConfig::Stamp(_) => {
            let placed = if r.poses.is_empty() {
                vec![PlacedPose { x: 0.0, y: 0.0, theta: 0.0, marker_id: None }]
            } else {
                r.poses.clone()
            };
            for requested in placed {
                let marker = match requested.marker_id {
                    Some(id) => cfg.marker.with_id(id),
                    None => cfg.marker.clone(),
                };
                let (layout, _) = marker.layout()?;
                let pose = RenderPose::new(requested.x, requested.y, requested.theta, ppp);
                render_into(&mut img, &layout, &pose)?;
                let id = match &marker {
                    MarkerConfig::Hp(s) => s.marker_id,
                    MarkerConfig::Stamp(s) => s.marker_id,
                    MarkerConfig::Megarena(_) => unreachable!(),
                };
                poses.push(RenderedPose { requested, render_pose: pose });
                expected.push(ExpectedPose {
                    marker_id: Some(id),
                    x: requested.x,
                    y: requested.y,
                    theta: normalize_angle(requested.theta),
                });
            }
        }
    }
    if let Some(sensor) = &r.sensor {
        img = degrade(&img, sensor, cfg.seed)?;
    }
    let guidelines = GuidelineReport::evaluate(&cfg.guidelines, &guideline_input(&cfg.marker, ppp, w, h));
    let sidecar = Sidecar {
        schema_version: SCHEMA_VERSION,
        kind: cfg.marker.name().into(),
        marker: cfg.marker.clone(),
        width: w,
        height: h,
        pixels_per_period: ppp,
        seed: cfg.seed,
        sensor: r.sensor,
        poses,
        expected,
        guidelines,
    };
    Ok((img, sidecar))
}

pub fn sidecar_path(image: &Path) -> PathBuf {
    image.with_extension("sidecar.json")
}

/// Renders and writes the image plus its sidecar; returns the sidecar path.
pub fn write_render(cfg: &JobConfig, output: &Path) -> Result<(Sidecar, PathBuf), CliError> {
    let (img, sidecar) = render_scene(cfg)?;
    save_image(&img, output, cfg.render.file_bit_depth)?;
    let path = sidecar_path(output);
    let text = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    std::fs::write(&path, text + "\n").map_err(|e| dotphase::Error::Io { path: path.clone(), source: e })?;
    Ok((sidecar, path))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AbsoluteRecord {
    /// Physical units.
    pub pose: Pose2D,
    pub code_x: usize,
    pub code_y: usize,
    pub quadrant: usize,
    pub confidence: f64,
    pub period_px: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MarkerRecord {
    pub marker_id: Option<u32>,
    /// Periods from the image center.
    pub pose: Pose2D,
    pub physical: Pose2D,
    pub center_px: (f64, f64),
    pub corners_px: [(f64, f64); 4],
    pub period_px: f64,
    pub quadrant: usize,
    pub confidence: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RelativeRecord {
    pub from: usize,
    pub to: usize,
    pub from_id: Option<u32>,
    pub to_id: Option<u32>,
    /// Pose of `to` in the frame of `from`, in periods.
    pub pose: Pose2D,
    pub physical: Pose2D,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FailureRecord {
    pub region: [(f64, f64); 4],
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub schema_version: u32,
    pub status: String,
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub image: Option<PathBuf>,
    pub width: usize,
    pub height: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub absolute: Option<AbsoluteRecord>,
    pub markers: Vec<MarkerRecord>,
    pub relative: Vec<RelativeRecord>,
    pub failures: Vec<FailureRecord>,
    pub timings: StageTimings,
    pub load_ms: f64,
    pub total_ms: f64,
    pub guidelines: GuidelineReport,
}

fn marker_record(e: &SmallMarkerEstimate, period: f64) -> Result<MarkerRecord, CliError> {
    let pose = Pose2D::from(e);
    Ok(MarkerRecord {
        marker_id: e.marker_id,
        pose,
        physical: periods_to_physical(&pose, period)?,
        center_px: e.center_px,
        corners_px: e.region.corners,
        period_px: e.period_px,
        quadrant: e.quadrant,
        confidence: e.confidence,
    })
}

/// Full pipeline on an in-memory image.
pub fn estimate_image(cfg: &JobConfig, img: &ImageGray) -> Result<EstimateRecord, CliError> {
    let start = Instant::now();
    let (w, h) = (img.width(), img.height());
    let period = cfg.marker.period();
    let mut record = EstimateRecord {
        schema_version: SCHEMA_VERSION,
        status: "ok".into(),
        kind: cfg.marker.name().into(),
        image: None,
        width: w,
        height: h,
        absolute: None,
        markers: Vec::new(),
        relative: Vec::new(),
        failures: Vec::new(),
        timings: StageTimings::default(),
        load_ms: 0.0,
        total_ms: 0.0,
        guidelines: GuidelineReport::default(),
    };
    let period_px = match &cfg.marker {
        MarkerConfig::Megarena(m) => {
            let decoder = MegarenaDecoder::new(&m.spec()?)?;
            let est = decoder.estimate(img, &cfg.analysis.analysis_config())?;
            let (sxy, sth) = phase_uncertainty(&est.phase);
            let pose = Pose2D::new(est.pose.x, est.pose.y, est.pose.theta)
                .with_uncertainty(sxy * m.period, sth);
            record.absolute = Some(AbsoluteRecord {
                pose,
                code_x: est.pose.code_x,
                code_y: est.pose.code_y,
                quadrant: est.pose.quadrant,
                confidence: est.pose.confidence,
                period_px: est.phase.period_px,
            });
            record.timings = est.timings;
            est.phase.period_px
        }
        MarkerConfig::Hp(_) | MarkerConfig::Stamp(_) => {
            let (_, geom) = cfg.marker.layout()?;
            let geom = geom.expect("small markers carry a geometry");
            let t = Instant::now();
            let regions = detect_markers(img, geom.kind);
            record.timings.detect_ms += t.elapsed().as_secs_f64() * 1e3;
            if regions.is_empty() {
                return Err(dotphase::Error::NoMarkerFound.into());
            }
            let mut found = Vec::new();
            let mut first_err = None;
            for region in &regions {
                match estimate_small_marker(img, region, &geom) {
                    Ok(e) => {
                        record.timings.accumulate(&e.timings);
                        found.push(e);
                    }
                    Err(err) => {
                        record.failures.push(FailureRecord {
                            region: region.corners,
                            code: err.code().into(),
                            message: err.to_string(),
                        });
                        first_err.get_or_insert(err);
                    }
                }
            }
            if found.is_empty() {
                return Err(first_err.expect("at least one region").into());
            }
            found.sort_by(|a, b| {
                a.marker_id
                    .cmp(&b.marker_id)
                    .then(a.x.total_cmp(&b.x))
                    .then(a.y.total_cmp(&b.y))
            });
            for e in &found {
                record.markers.push(marker_record(e, period)?);
            }
            for i in 0..found.len() {
                for j in i + 1..found.len() {
                    let (a, b) = (&record.markers[i], &record.markers[j]);
                    let pose = relative_pose(&a.pose, &b.pose);
                    record.relative.push(RelativeRecord {
                        from: i,
                        to: j,
                        from_id: a.marker_id,
                        to_id: b.marker_id,
                        pose,
                        physical: periods_to_physical(&pose, period)?,
                    });
                }
            }
            found.iter().map(|e| e.period_px).sum::<f64>() / found.len() as f64
        }
    };
    record.guidelines = GuidelineReport::evaluate(
        &cfg.guidelines,
        &guideline_input(&cfg.marker, period_px, w, h),
    );
    record.total_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(record)
}

/// Loads `path` and runs [`estimate_image`]; `total_ms` includes the load.
pub fn estimate_file(cfg: &JobConfig, path: &Path) -> Result<EstimateRecord, CliError> {
    let t = Instant::now();
    let img = load_image(path)?;
    let load_ms = t.elapsed().as_secs_f64() * 1e3;
    let mut record = estimate_image(cfg, &img)?;
    record.image = Some(path.to_path_buf());
    record.load_ms = load_ms;
    record.total_ms += load_ms;
    Ok(record)
}

pub const ESTIMATE_CSV_HEADER: &str =
    "kind,index,marker_id,x,y,theta,sigma_xy,sigma_theta,confidence,total_ms";

/// One line per absolute pose, marker and marker pair (`relative` rows).
pub fn estimate_csv(r: &EstimateRecord) -> String {
    let mut out = String::from(ESTIMATE_CSV_HEADER);
    out.push('\n');
    let mut row = |kind: &str, index: String, id: String, p: &Pose2D, conf: f64| {
        let _ = writeln!(
            out,
            "{kind},{index},{id},{},{},{},{},{},{conf},{}",
            p.x, p.y, p.theta, p.sigma_xy, p.sigma_theta, r.total_ms
        );
    };
    let id = |v: Option<u32>| v.map(|v| v.to_string()).unwrap_or_default();
    if let Some(a) = &r.absolute {
        row(&r.kind, "0".into(), String::new(), &a.pose, a.confidence);
    }
    for (i, m) in r.markers.iter().enumerate() {
        row(&r.kind, i.to_string(), id(m.marker_id), &m.physical, m.confidence);
    }
    for rel in &r.relative {
        let index = format!("{}-{}", rel.from, rel.to);
        let ids = format!("{}-{}", id(rel.from_id), id(rel.to_id));
        row("relative", index, ids, &rel.physical, f64::NAN);
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayoutRecord {
    pub schema_version: u32,
    pub kind: String,
    pub path: PathBuf,
    pub format: String,
    pub rows: usize,
    pub cols: usize,
    pub present_dots: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub marker_id: Option<u32>,
}

/// Writes the layout as SVG, or as PNG when `output` ends in `.png`.
pub fn write_layout(cfg: &JobConfig, output: &Path) -> Result<LayoutRecord, CliError> {
    let (layout, _) = cfg.marker.layout()?;
    let png = output
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("png"));
    if png {
        let img = render_layout_image(&layout, cfg.render.pixels_per_period)?;
        save_image(&img, output, 8)?;
    } else {
        export_svg(&layout, output)?;
    }
    Ok(LayoutRecord {
        schema_version: SCHEMA_VERSION,
        kind: cfg.marker.name().into(),
        path: output.to_path_buf(),
        format: if png { "png" } else { "svg" }.into(),
        rows: layout.rows(),
        cols: layout.cols(),
        present_dots: layout.present_count(),
        marker_id: match &cfg.marker {
            MarkerConfig::Megarena(_) => None,
            MarkerConfig::Hp(s) => Some(s.marker_id),
            MarkerConfig::Stamp(s) => Some(s.marker_id),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use dotphase::pattern::HpCodeSpec;

    #[test]
    fn default_small_marker_scene_is_centered() {
        let cfg = JobConfig::new(MarkerConfig::Hp(HpCodeSpec::new(20, 7)));
        let (img, side) = render_scene(&cfg).unwrap();
        assert_eq!((img.width(), img.height()), (360, 360));
        assert_eq!(side.expected, vec![ExpectedPose { marker_id: Some(7), x: 0.0, y: 0.0, theta: 0.0 }]);
        let rec = estimate_image(&cfg, &img).unwrap();
        assert_eq!(rec.markers.len(), 1);
        assert_eq!(rec.markers[0].marker_id, Some(7));
        assert!(rec.markers[0].pose.x.abs() < 0.01 && rec.markers[0].pose.y.abs() < 0.01);
    }

    #[test]
    fn csv_has_one_line_per_marker_and_pair() {
        let mut cfg = JobConfig::new(MarkerConfig::Hp(HpCodeSpec::new(18, 0)));
        cfg.render.width = 640;
        cfg.render.height = 240;
        cfg.render.pixels_per_period = 8.0;
        cfg.render.poses = vec![
            PlacedPose { x: -20.0, y: 0.0, theta: 0.1, marker_id: Some(3) },
            PlacedPose { x: 20.0, y: 0.5, theta: -0.1, marker_id: Some(9) },
        ];
        let (img, _) = render_scene(&cfg).unwrap();
        let csv = estimate_csv(&estimate_image(&cfg, &img).unwrap());
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 4, "{csv}");
        assert_eq!(lines[0], ESTIMATE_CSV_HEADER);
        assert!(lines[3].starts_with("relative,0-1,3-9,"));
    }
}
