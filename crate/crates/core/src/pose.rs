//! In-plane poses, homogeneous transforms and differential poses.
//!
//! A [`Transform`] maps marker-frame coordinates to camera-frame
//! coordinates. Uncertainties are combined in quadrature, ignoring
//! covariance.

use std::f64::consts::PI;
use std::ops::Mul;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::marker::SmallMarkerEstimate;
use crate::phase::PhaseResult;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    /// `[0, 2 pi)` for absolute poses, `(-pi, pi]` for relative ones.
    pub theta: f64,
    pub sigma_xy: f64,
    pub sigma_theta: f64,
}

/// Angle folded into `[0, 2 pi)`.
pub fn normalize_angle(a: f64) -> f64 {
    let r = a.rem_euclid(2.0 * PI);
    // rem_euclid can round up to exactly 2 pi
    if r >= 2.0 * PI {
        0.0
    } else {
        r
    }
}

/// Angle folded into `(-pi, pi]`.
pub fn signed_angle(a: f64) -> f64 {
    let r = normalize_angle(a);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

impl Pose2D {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: normalize_angle(theta),
            sigma_xy: 0.0,
            sigma_theta: 0.0,
        }
    }

    pub fn with_uncertainty(mut self, sigma_xy: f64, sigma_theta: f64) -> Self {
        self.sigma_xy = sigma_xy;
        self.sigma_theta = sigma_theta;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x, self.y, self.theta, self.sigma_xy, self.sigma_theta]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidArgument("pose has non-finite fields".into()));
        }
        if self.sigma_xy < 0.0 || self.sigma_theta < 0.0 {
            return Err(Error::InvalidArgument("uncertainties must be >= 0".into()));
        }
        Ok(())
    }

    /// Pose whose transform is the inverse of this one's.
    pub fn inverse(&self) -> Pose2D {
        let mut p = to_transform(self).inverse().to_pose();
        p.sigma_xy = self.sigma_xy;
        p.sigma_theta = self.sigma_theta;
        p
    }
}

/// Pose of a small marker in the camera frame, in periods from the image
/// center, with uncertainties from its phase fit.
impl From<&SmallMarkerEstimate> for Pose2D {
    fn from(e: &SmallMarkerEstimate) -> Self {
        let (sxy, sth) = phase_uncertainty(&e.phase);
        Pose2D::new(e.x, e.y, e.theta).with_uncertainty(sxy, sth)
    }
}

/// Standard uncertainty of a phase-derived position (periods) and angle
/// (rad). Neighboring filtered pixels are correlated over about a period,
/// so the independent samples are counted in lattice cells:
/// `sigma_xy = rms / (2 pi sqrt(N))` and, for the slope of a plane fitted
/// over a square of `N` cells, `sigma_theta = rms sqrt(12) / (2 pi N)`.
pub fn phase_uncertainty(phase: &PhaseResult) -> (f64, f64) {
    let rms = ((phase.plane1.rms_residual.powi(2) + phase.plane2.rms_residual.powi(2)) / 2.0).sqrt();
    let cells = (phase.pixels_used as f64 / (phase.period_px * phase.period_px)).max(1.0);
    (
        rms / (2.0 * PI * cells.sqrt()),
        rms * 12f64.sqrt() / (2.0 * PI * cells),
    )
}

/// 3x3 homogeneous rigid transform, row-major.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transform {
    pub m: [[f64; 3]; 3],
}

impl Transform {
    pub fn identity() -> Self {
        Self {
            m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    /// Rigid inverse: `[R^T, -R^T t]`.
    pub fn inverse(&self) -> Transform {
        let m = &self.m;
        let (tx, ty) = (m[0][2], m[1][2]);
        Transform {
            m: [
                [m[0][0], m[1][0], -(m[0][0] * tx + m[1][0] * ty)],
                [m[0][1], m[1][1], -(m[0][1] * tx + m[1][1] * ty)],
                [0.0, 0.0, 1.0],
            ],
        }
    }

    pub fn apply(&self, (x, y): (f64, f64)) -> (f64, f64) {
        let m = &self.m;
        (m[0][0] * x + m[0][1] * y + m[0][2], m[1][0] * x + m[1][1] * y + m[1][2])
    }

    /// Back to `(x, y, theta)` with theta in `[0, 2 pi)`; uncertainties zero.
    pub fn to_pose(&self) -> Pose2D {
        Pose2D::new(self.m[0][2], self.m[1][2], self.m[1][0].atan2(self.m[0][0]))
    }

    /// Whether the rotation block is orthonormal with determinant +1.
    pub fn is_rigid(&self, tol: f64) -> bool {
        let m = &self.m;
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        let c0 = m[0][0] * m[0][0] + m[1][0] * m[1][0];
        let c1 = m[0][1] * m[0][1] + m[1][1] * m[1][1];
        let dot = m[0][0] * m[0][1] + m[1][0] * m[1][1];
        (det - 1.0).abs() <= tol
            && (c0 - 1.0).abs() <= tol
            && (c1 - 1.0).abs() <= tol
            && dot.abs() <= tol
            && m[2] == [0.0, 0.0, 1.0]
    }

    pub fn max_abs_diff(&self, other: &Transform) -> f64 {
        let mut d = 0.0f64;
        for r in 0..3 {
            for c in 0..3 {
                d = d.max((self.m[r][c] - other.m[r][c]).abs());
            }
        }
        d
    }
}

impl Mul for Transform {
    type Output = Transform;

    fn mul(self, rhs: Transform) -> Transform {
        let mut m = [[0.0; 3]; 3];
        for (r, row) in m.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| self.m[r][k] * rhs.m[k][c]).sum();
            }
        }
        Transform { m }
    }
}

/// Marker-to-camera transform of a pose.
pub fn to_transform(p: &Pose2D) -> Transform {
    let (s, c) = p.theta.sin_cos();
    Transform {
        m: [[c, -s, p.x], [s, c, p.y], [0.0, 0.0, 1.0]],
    }
}

/// Pose of `b` in `a`'s frame, `T_a^-1 T_b`, angle in `(-pi, pi]`.
pub fn relative_pose(a: &Pose2D, b: &Pose2D) -> Pose2D {
    let t = to_transform(a).inverse() * to_transform(b);
    let mut p = t.to_pose();
    p.theta = signed_angle(p.theta);
    // b's offset is rotated into a's frame and a's angle error swings it
    let lever = (b.x - a.x).hypot(b.y - a.y);
    p.sigma_xy = (a.sigma_xy.powi(2) + b.sigma_xy.powi(2) + (lever * a.sigma_theta).powi(2)).sqrt();
    p.sigma_theta = a.sigma_theta.hypot(b.sigma_theta);
    p
}

/// Scales a pose measured in periods to physical units.
pub fn periods_to_physical(p: &Pose2D, period: f64) -> Result<Pose2D> {
    if !(period > 0.0 && period.is_finite()) {
        return Err(Error::InvalidArgument(format!("period {period} must be > 0")));
    }
    Ok(Pose2D {
        x: p.x * period,
        y: p.y * period,
        sigma_xy: p.sigma_xy * period,
        ..*p
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn angles_fold() {
        assert_eq!(normalize_angle(-0.0), 0.0);
        assert!((normalize_angle(-PI / 2.0) - 1.5 * PI).abs() < 1e-15);
        assert!(normalize_angle(-1e-300) < 2.0 * PI);
        assert_eq!(signed_angle(PI), PI);
        assert!((signed_angle(1.5 * PI) + PI / 2.0).abs() < 1e-15);
    }

    #[test]
    fn rigid_check() {
        let mut t = to_transform(&Pose2D::new(1.0, 2.0, 0.7));
        assert!(t.is_rigid(1e-12));
        t.m[0][0] *= 1.01;
        assert!(!t.is_rigid(1e-9));
    }
}
