use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageGray;
use crate::pattern::layout::DotLayout;

/// Placement of a layout in an image.
///
/// A layout point `p` (periods) lands on pixel
/// `c + s * (R(theta) * (p - m) + t)` where `c` is the image center, `m` the
/// layout center, `s` the pixels per period and `t = (tx, ty)`. Rotation is
/// applied about the image center first, then the translation in periods.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderPose {
    pub tx: f64,
    pub ty: f64,
    pub theta: f64,
    pub pixels_per_period: f64,
}

impl RenderPose {
    pub fn new(tx: f64, ty: f64, theta: f64, pixels_per_period: f64) -> Self {
        Self {
            tx,
            ty,
            theta,
            pixels_per_period,
        }
    }

    /// Pose that puts layout point `(x, y)` at the image center.
    pub fn viewing(layout: &DotLayout, x: f64, y: f64, theta: f64, pixels_per_period: f64) -> Self {
        let (mx, my) = layout.center();
        let (s, c) = theta.sin_cos();
        let (dx, dy) = (x - mx, y - my);
        Self {
            tx: -(c * dx - s * dy),
            ty: -(s * dx + c * dy),
            theta,
            pixels_per_period,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pixels_per_period > 0.0 && self.pixels_per_period.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "pixels per period {} must be > 0",
                self.pixels_per_period
            )));
        }
        if !(self.tx.is_finite() && self.ty.is_finite() && self.theta.is_finite()) {
            return Err(Error::InvalidArgument("pose must be finite".into()));
        }
        Ok(())
    }

    /// Pixel position of layout point `(x, y)` in a `width x height` frame.
    pub fn layout_to_pixel(&self, layout: &DotLayout, width: usize, height: usize, x: f64, y: f64) -> (f64, f64) {
        Placement::new(layout, self, width, height).to_pixel(x, y)
    }

    /// Layout point under pixel `(px, py)`.
    pub fn pixel_to_layout(&self, layout: &DotLayout, width: usize, height: usize, px: f64, py: f64) -> (f64, f64) {
        Placement::new(layout, self, width, height).to_layout(px, py)
    }

    /// Whether the pixel scale is inside the recommended 7..=15 px window.
    pub fn in_recommended_scale(&self) -> bool {
        (7.0..=15.0).contains(&self.pixels_per_period)
    }
}

/// Layout-to-pixel mapping for one placement.
#[derive(Debug, Clone, Copy)]
struct Placement {
    cx: f64,
    cy: f64,
    mx: f64,
    my: f64,
    cos: f64,
    sin: f64,
    scale: f64,
    tx: f64,
    ty: f64,
}

impl Placement {
    fn new(layout: &DotLayout, pose: &RenderPose, width: usize, height: usize) -> Self {
        let (mx, my) = layout.center();
        let (sin, cos) = pose.theta.sin_cos();
        Self {
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
            mx,
            my,
            cos,
            sin,
            scale: pose.pixels_per_period,
            tx: pose.tx,
            ty: pose.ty,
        }
    }

    #[inline]
    fn to_pixel(&self, x: f64, y: f64) -> (f64, f64) {
        let (dx, dy) = (x - self.mx, y - self.my);
        (
            self.cx + self.scale * (self.cos * dx - self.sin * dy + self.tx),
            self.cy + self.scale * (self.sin * dx + self.cos * dy + self.ty),
        )
    }

    #[inline]
    fn to_layout(&self, px: f64, py: f64) -> (f64, f64) {
        let u = (px - self.cx) / self.scale - self.tx;
        let v = (py - self.cy) / self.scale - self.ty;
        (
            self.mx + self.cos * u + self.sin * v,
            self.my - self.sin * u + self.cos * v,
        )
    }
}

const SUBSAMPLES: usize = 4;

/// Coverage of one sub-sample cell whose center is `d` pixels outside an edge.
#[inline]
fn sub_coverage(d: f64) -> f64 {
    (0.5 - d * SUBSAMPLES as f64).clamp(0.0, 1.0)
}

/// Paints `value` over the pixels in `[x0, x1] x [y0, y1]` with coverage
/// estimated on a 4x4 sub-pixel grid from a signed distance (in pixels).
fn paint(
    img: &mut ImageGray,
    bbox: (f64, f64, f64, f64),
    value: f64,
    signed_distance: impl Fn(f64, f64) -> f64,
) {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let x0 = (bbox.0.floor() as i64 - 1).max(0);
    let y0 = (bbox.1.floor() as i64 - 1).max(0);
    let x1 = (bbox.2.ceil() as i64 + 1).min(w - 1);
    let y1 = (bbox.3.ceil() as i64 + 1).min(h - 1);
    let step = 1.0 / SUBSAMPLES as f64;
    let offset = -0.5 + step / 2.0;
    for y in y0..=y1 {
        for x in x0..=x1 {
            let mut cov = 0.0;
            for sy in 0..SUBSAMPLES {
                let py = y as f64 + offset + sy as f64 * step;
                for sx in 0..SUBSAMPLES {
                    let px = x as f64 + offset + sx as f64 * step;
                    cov += sub_coverage(signed_distance(px, py));
                }
            }
            if cov > 0.0 {
                cov /= (SUBSAMPLES * SUBSAMPLES) as f64;
                let (xu, yu) = (x as usize, y as usize);
                let old = img.get(xu, yu);
                img.set(xu, yu, old * (1.0 - cov) + value * cov);
            }
        }
    }
}

/// Draws `layout` into an existing image (painter's order: solids, then dots).
pub fn render_into(img: &mut ImageGray, layout: &DotLayout, pose: &RenderPose) -> Result<()> {
    pose.validate()?;
    let (width, height) = (img.width(), img.height());
    let pl = Placement::new(layout, pose, width, height);
    let scale = pl.scale;

    for rect in layout.solids() {
        let corners = [
            pl.to_pixel(rect.x0, rect.y0),
            pl.to_pixel(rect.x1, rect.y0),
            pl.to_pixel(rect.x1, rect.y1),
            pl.to_pixel(rect.x0, rect.y1),
        ];
        let bbox = bbox_of(&corners);
        paint(img, bbox, rect.value, |px, py| {
            let (lx, ly) = pl.to_layout(px, py);
            rect.signed_distance(lx, ly) * scale
        });
    }

    // visible cell range from the frame corners mapped into the layout
    let frame = [
        pl.to_layout(-1.0, -1.0),
        pl.to_layout(width as f64, -1.0),
        pl.to_layout(width as f64, height as f64),
        pl.to_layout(-1.0, height as f64),
    ];
    let (lx0, ly0, lx1, ly1) = bbox_of(&frame);
    let col0 = (lx0.floor() - 1.0).max(0.0) as usize;
    let row0 = (ly0.floor() - 1.0).max(0.0) as usize;
    let col1 = ((lx1.ceil() + 1.0).max(0.0) as usize).min(layout.cols());
    let row1 = ((ly1.ceil() + 1.0).max(0.0) as usize).min(layout.rows());
    let radius = 0.5 * layout.dot_diameter_ratio() * scale;
    for row in row0..row1 {
        for col in col0..col1 {
            if !layout.is_present(row, col) {
                continue;
            }
            let (qx, qy) = pl.to_pixel(col as f64, row as f64);
            if qx < -radius - 1.0
                || qy < -radius - 1.0
                || qx > width as f64 + radius
                || qy > height as f64 + radius
            {
                continue;
            }
            paint(
                img,
                (qx - radius, qy - radius, qx + radius, qy + radius),
                1.0,
                |px, py| (px - qx).hypot(py - qy) - radius,
            );
        }
    }
    Ok(())
}

fn bbox_of(points: &[(f64, f64)]) -> (f64, f64, f64, f64) {
    points.iter().fold(
        (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
        |(a, b, c, d), &(x, y)| (a.min(x), b.min(y), c.max(x), d.max(y)),
    )
}

/// White anti-aliased discs on a black background.
pub fn render(layout: &DotLayout, pose: &RenderPose, width: usize, height: usize) -> Result<ImageGray> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidArgument("output size must be positive".into()));
    }
    let mut img = ImageGray::new(width, height);
    render_into(&mut img, layout, pose)?;
    Ok(img)
}

/// Axis-aligned image of the whole layout with a one-period margin.
pub fn render_layout_image(layout: &DotLayout, pixels_per_period: f64) -> Result<ImageGray> {
    let w = ((layout.cols() as f64 + 2.0) * pixels_per_period).round() as usize;
    let h = ((layout.rows() as f64 + 2.0) * pixels_per_period).round() as usize;
    render(
        layout,
        &RenderPose::new(0.0, 0.0, 0.0, pixels_per_period),
        w.max(1),
        h.max(1),
    )
}
