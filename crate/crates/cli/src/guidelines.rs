//! Design guideline checks on scale and period counts.

use serde::{Deserialize, Serialize};

use crate::config::GuidelineToggles;

pub const MIN_PIXELS_PER_PERIOD: f64 = 7.0;
pub const MAX_PIXELS_PER_PERIOD: f64 = 15.0;
pub const MIN_SMALL_MARKER_PERIODS: usize = 17;
pub const GOOD_SMALL_MARKER_PERIODS: (usize, usize) = (20, 30);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckStatus {
    Pass,
    Warn,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidelineCheck {
    pub name: String,
    pub status: CheckStatus,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GuidelineReport {
    pub checks: Vec<GuidelineCheck>,
}

/// What the checks look at. Fields left `None` skip their check.
#[derive(Debug, Clone, Copy, Default)]
pub struct GuidelineInput {
    pub pixels_per_period: Option<f64>,
    /// Periods across a small marker.
    pub marker_periods: Option<usize>,
    /// Megarena bit depth and periods visible along the shorter frame side.
    pub megarena: Option<(u32, f64)>,
}

impl GuidelineReport {
    pub fn evaluate(toggles: &GuidelineToggles, input: &GuidelineInput) -> Self {
        let mut checks = Vec::new();
        if let (true, Some(ppp)) = (toggles.pixel_window, input.pixels_per_period) {
            let (status, message) = if ppp < MIN_PIXELS_PER_PERIOD {
                (CheckStatus::Warn, format!("{ppp:.2} px/period is below 7 px/period"))
            } else if ppp > MAX_PIXELS_PER_PERIOD {
                (CheckStatus::Warn, format!("{ppp:.2} px/period is above 15 px/period"))
            } else {
                (CheckStatus::Pass, format!("{ppp:.2} px/period within 7 to 15"))
            };
            checks.push(GuidelineCheck {
                name: "pixel_window".into(),
                status,
                message,
            });
        }
        if let (true, Some(n)) = (toggles.small_marker_periods, input.marker_periods) {
            let (lo, hi) = GOOD_SMALL_MARKER_PERIODS;
            let (status, message) = if n < MIN_SMALL_MARKER_PERIODS {
                (CheckStatus::Warn, format!("{n} periods across, fewer than 17"))
            } else if (lo..=hi).contains(&n) {
                (CheckStatus::Pass, format!("{n} periods across; 20 to 30 periods is a good choice"))
            } else {
                (CheckStatus::Pass, format!("{n} periods across, at least 17"))
            };
            checks.push(GuidelineCheck {
                name: "small_marker_periods".into(),
                status,
                message,
            });
        }
        if let (true, Some((bits, visible))) = (toggles.megarena_periods, input.megarena) {
            let required = 3 * (bits as usize + 1);
            let (status, message) = if visible + 1e-6 >= required as f64 {
                (CheckStatus::Pass, format!("{visible:.1} visible periods, 3(n+1) = {required} required"))
            } else {
                (
                    CheckStatus::Fail,
                    format!("{visible:.1} visible periods, fewer than 3(n+1) = {required}"),
                )
            };
            checks.push(GuidelineCheck {
                name: "megarena_periods".into(),
                status,
                message,
            });
        }
        Self { checks }
    }

    pub fn worst(&self) -> CheckStatus {
        self.checks.iter().map(|c| c.status).max().unwrap_or(CheckStatus::Pass)
    }

    pub fn get(&self, name: &str) -> Option<&GuidelineCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}
