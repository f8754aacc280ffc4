//! Job configuration: one JSON document, optionally overridden by flags.

use std::path::{Path, PathBuf};

use dotphase::image::SensorSpec;
use dotphase::pattern::{
    layout_hpcode, layout_megarena, layout_stamp, DotLayout, HpCodeSpec, MegarenaSpec,
    SmallMarkerGeometry, StampSpec,
};
use dotphase::phase::AnalysisConfig;
use dotphase::sequence::LfsrSpec;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MarkerConfig {
    Megarena(MegarenaParams),
    Hp(HpCodeSpec),
    Stamp(StampSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MegarenaParams {
    pub n: u32,
    /// Defaults to the full sequence length.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extent_codes: Option<usize>,
    #[serde(default = "one")]
    pub period: f64,
    #[serde(default = "half")]
    pub dot_diameter_ratio: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_spec: Option<LfsrSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_spec: Option<LfsrSpec>,
}

fn one() -> f64 {
    1.0
}

fn half() -> f64 {
    0.5
}

fn yes() -> bool {
    true
}

impl MegarenaParams {
    pub fn spec(&self) -> Result<MegarenaSpec, CliError> {
        let mut spec = MegarenaSpec::with_defaults(self.n, 1)?;
        spec.extent_codes = self.extent_codes.unwrap_or((1usize << self.n) - 1);
        spec.period = self.period;
        spec.dot_diameter_ratio = self.dot_diameter_ratio;
        if let Some(x) = &self.x_spec {
            spec.x_spec = x.clone();
        }
        if let Some(y) = &self.y_spec {
            spec.y_spec = y.clone();
        }
        Ok(spec)
    }
}

impl MarkerConfig {
    pub fn name(&self) -> &'static str {
        match self {
            MarkerConfig::Megarena(_) => "megarena",
            MarkerConfig::Hp(_) => "hp",
            MarkerConfig::Stamp(_) => "stamp",
        }
    }

    pub fn period(&self) -> f64 {
        match self {
            MarkerConfig::Megarena(m) => m.period,
            MarkerConfig::Hp(h) => h.period,
            MarkerConfig::Stamp(s) => s.period,
        }
    }

    pub fn periods_across(&self) -> Option<usize> {
        match self {
            MarkerConfig::Megarena(_) => None,
            MarkerConfig::Hp(h) => Some(h.periods_across),
            MarkerConfig::Stamp(s) => Some(s.periods_across),
        }
    }

    /// Same marker with `periods_across` (small markers) replaced.
    pub fn with_periods(&self, periods: usize) -> MarkerConfig {
        let mut m = self.clone();
        match &mut m {
            MarkerConfig::Megarena(_) => {}
            MarkerConfig::Hp(h) => h.periods_across = periods,
            MarkerConfig::Stamp(s) => s.periods_across = periods,
        }
        m
    }

    pub fn with_id(&self, id: u32) -> MarkerConfig {
        let mut m = self.clone();
        match &mut m {
            MarkerConfig::Megarena(_) => {}
            MarkerConfig::Hp(h) => h.marker_id = id,
            MarkerConfig::Stamp(s) => s.marker_id = id,
        }
        m
    }

    /// Layout plus, for small markers, the geometry the estimator needs.
    pub fn layout(&self) -> Result<(DotLayout, Option<SmallMarkerGeometry>), CliError> {
        Ok(match self {
            MarkerConfig::Megarena(m) => (layout_megarena(&m.spec()?)?, None),
            MarkerConfig::Hp(h) => {
                let (l, g) = layout_hpcode(h)?;
                (l, Some(g))
            }
            MarkerConfig::Stamp(s) => {
                let (l, g) = layout_stamp(s)?;
                (l, Some(g))
            }
        })
    }

    pub fn validate(&self) -> Result<(), CliError> {
        match self {
            MarkerConfig::Megarena(m) => {
                let spec = m.spec()?;
                let length = (1usize << spec.n) - 1;
                if spec.extent_codes > length {
                    return Err(dotphase::Error::ExtentTooLarge {
                        extent: spec.extent_codes,
                        length,
                    }
                    .into());
                }
                spec.sequences()?;
            }
            _ => {
                self.layout()?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSettings {
    #[serde(default)]
    pub apodize: bool,
    /// Band-pass width as a fraction of the lobe frequency.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_f: Option<f64>,
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        Self {
            apodize: false,
            sigma_f: None,
        }
    }
}

impl AnalysisSettings {
    pub fn analysis_config(&self) -> AnalysisConfig {
        let mut c = if self.apodize {
            AnalysisConfig::apodized()
        } else {
            AnalysisConfig::default()
        };
        if let Some(s) = self.sigma_f {
            c.sigma_f_ratio = s;
        }
        c
    }
}

/// Where a marker sits in a rendered frame. For Megarena `(x, y)` is the
/// layout point (periods) under the image center; for small markers it is
/// the marker center relative to the image center, in periods.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlacedPose {
    pub x: f64,
    pub y: f64,
    #[serde(default)]
    pub theta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub marker_id: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderSettings {
    #[serde(default = "default_ppp")]
    pub pixels_per_period: f64,
    #[serde(default = "default_size")]
    pub width: usize,
    #[serde(default = "default_size")]
    pub height: usize,
    #[serde(default)]
    pub poses: Vec<PlacedPose>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sensor: Option<SensorSpec>,
    /// Bit depth of the written file (8 or 16).
    #[serde(default = "default_file_depth")]
    pub file_bit_depth: u32,
}

fn default_ppp() -> f64 {
    10.0
}

fn default_size() -> usize {
    360
}

fn default_file_depth() -> u32 {
    16
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            pixels_per_period: default_ppp(),
            width: default_size(),
            height: default_size(),
            poses: Vec::new(),
            sensor: None,
            file_bit_depth: default_file_depth(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSettings {
    /// Marker periods across (small markers) or visible periods (Megarena).
    #[serde(default = "default_periods")]
    pub periods: Vec<usize>,
    #[serde(default = "zero_list")]
    pub noise: Vec<f64>,
    #[serde(default = "zero_list")]
    pub blur: Vec<f64>,
    #[serde(default = "default_reps")]
    pub repetitions: usize,
    #[serde(default = "default_ppp")]
    pub pixels_per_period: f64,
    /// Random rotations are drawn from `[-max_theta, max_theta]`.
    #[serde(default = "default_max_theta")]
    pub max_theta: f64,
}

fn default_periods() -> Vec<usize> {
    vec![9, 13, 17, 25]
}

fn zero_list() -> Vec<f64> {
    vec![0.0]
}

fn default_reps() -> usize {
    20
}

fn default_max_theta() -> f64 {
    0.3
}

impl Default for BenchSettings {
    fn default() -> Self {
        Self {
            periods: default_periods(),
            noise: zero_list(),
            blur: zero_list(),
            repetitions: default_reps(),
            pixels_per_period: default_ppp(),
            max_theta: default_max_theta(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuidelineToggles {
    #[serde(default = "yes")]
    pub pixel_window: bool,
    #[serde(default = "yes")]
    pub small_marker_periods: bool,
    #[serde(default = "yes")]
    pub megarena_periods: bool,
}

impl Default for GuidelineToggles {
    fn default() -> Self {
        Self {
            pixel_window: true,
            small_marker_periods: true,
            megarena_periods: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Json,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobConfig {
    pub marker: MarkerConfig,
    #[serde(default)]
    pub analysis: AnalysisSettings,
    #[serde(default)]
    pub render: RenderSettings,
    #[serde(default)]
    pub bench: BenchSettings,
    #[serde(default)]
    pub guidelines: GuidelineToggles,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub format: OutputFormat,
}

impl JobConfig {
    pub fn new(marker: MarkerConfig) -> Self {
        Self {
            marker,
            analysis: AnalysisSettings::default(),
            render: RenderSettings::default(),
            bench: BenchSettings::default(),
            guidelines: GuidelineToggles::default(),
            seed: 0,
            image: None,
            output: None,
            format: OutputFormat::Json,
        }
    }

    /// Parses and validates; messages carry serde's line and column.
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: JobConfig =
            serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| dotphase::Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_json(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.marker.validate()?;
        let r = &self.render;
        if !(r.pixels_per_period > 0.0 && r.pixels_per_period.is_finite()) {
            return Err(CliError::Config("render.pixels_per_period must be > 0".into()));
        }
        if r.width == 0 || r.height == 0 {
            return Err(CliError::Config("render.width and render.height must be >= 1".into()));
        }
        if ![8, 16].contains(&r.file_bit_depth) {
            return Err(CliError::Config("render.file_bit_depth must be 8 or 16".into()));
        }
        if let Some(s) = &r.sensor {
            s.validate()?;
        }
        if matches!(self.marker, MarkerConfig::Megarena(_)) && r.poses.len() > 1 {
            return Err(CliError::Config("megarena renders take at most one pose".into()));
        }
        let b = &self.bench;
        if !(b.pixels_per_period > 0.0 && b.pixels_per_period.is_finite()) {
            return Err(CliError::Config("bench.pixels_per_period must be > 0".into()));
        }
        if b.periods.contains(&0) {
            return Err(CliError::Config("bench.periods must be >= 1".into()));
        }
        if b.noise.iter().chain(&b.blur).any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(CliError::Config("bench noise and blur must be >= 0".into()));
        }
        if let Some(s) = self.analysis.sigma_f {
            if !(s > 0.0 && s < 1.0) {
                return Err(CliError::Config("analysis.sigma_f must be in (0, 1)".into()));
            }
        }
        Ok(())
    }
}
