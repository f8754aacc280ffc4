//! Grayscale images, PGM/PNG I/O and synthetic sensor degradation.
//!
//! Pixel `(0, 0)` is the top-left pixel and pixel centers sit on integer
//! coordinates: `x` grows to the right (columns), `y` grows downward (rows).
//! Every module of the crate shares this convention.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, ImageBuffer, ImageFormat, Luma};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major scalar intensity field with values normalized to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGray {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl ImageGray {
    /// All-black image.
    pub fn new(width: usize, height: usize) -> Self {
        assert!(width >= 1 && height >= 1, "image must be at least 1x1");
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        let mut img = Self::new(width, height);
        img.data.fill(value);
        img
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "{} samples for a {width}x{height} image",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut img = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                img.data[y * width + x] = f(x, y);
            }
        }
        img
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn row(&self, y: usize) -> &[f64] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Bilinear sample with edge clamping.
    pub fn bilinear(&self, x: f64, y: f64) -> f64 {
        let xm = (self.width - 1) as f64;
        let ym = (self.height - 1) as f64;
        let x = x.clamp(0.0, xm);
        let y = y.clamp(0.0, ym);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let top = self.get(x0, y0) * (1.0 - fx) + self.get(x1, y0) * fx;
        let bottom = self.get(x0, y1) * (1.0 - fx) + self.get(x1, y1) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    /// Copy of the rectangle `[x0, x0 + width) x [y0, y0 + height)`, clipped to the frame.
    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> ImageGray {
        let x1 = (x0 + width).min(self.width);
        let y1 = (y0 + height).min(self.height);
        let w = x1.saturating_sub(x0).max(1);
        let h = y1.saturating_sub(y0).max(1);
        ImageGray::from_fn(w, h, |x, y| self.get(x0 + x, y0 + y))
    }

    /// Lossless rotation by a quarter turn. The content rotates clockwise on
    /// screen, i.e. by +π/2 in the y-down pixel frame.
    pub fn rotate_quarter(&self) -> ImageGray {
        let (w, h) = (self.width, self.height);
        ImageGray::from_fn(h, w, |x, y| self.get(y, h - 1 - x))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ImageGray {
        ImageGray {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn clamp_unit(&mut self) {
        for v in &mut self.data {
            *v = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
        }
    }
}

/// Sensor model applied by [`degrade`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorSpec {
    pub bit_depth: u32,
    #[serde(default)]
    pub gaussian_noise_sigma: f64,
    #[serde(default)]
    pub blur_sigma: f64,
}

impl Default for SensorSpec {
    fn default() -> Self {
        Self {
            bit_depth: 16,
            gaussian_noise_sigma: 0.0,
            blur_sigma: 0.0,
        }
    }
}

impl SensorSpec {
    pub fn validate(&self) -> Result<()> {
        if ![8, 10, 12, 16].contains(&self.bit_depth) {
            return Err(Error::InvalidArgument(format!(
                "bit depth {} not in {{8, 10, 12, 16}}",
                self.bit_depth
            )));
        }
        if !(self.gaussian_noise_sigma >= 0.0 && self.gaussian_noise_sigma.is_finite()) {
            return Err(Error::InvalidArgument("noise sigma must be >= 0".into()));
        }
        if !(self.blur_sigma >= 0.0 && self.blur_sigma.is_finite()) {
            return Err(Error::InvalidArgument("blur sigma must be >= 0".into()));
        }
        Ok(())
    }
}

/// Round-half-up quantization to `bits` and back to `[0, 1]`.
#[inline]
pub fn quantize(v: f64, bits: u32) -> f64 {
    let max = ((1u64 << bits) - 1) as f64;
    (v.clamp(0.0, 1.0) * max + 0.5).floor() / max
}

#[inline]
fn to_sample(v: f64, max: f64) -> u32 {
    (v.clamp(0.0, 1.0) * max + 0.5).floor() as u32
}

/// Normalized 1-D Gaussian kernel of radius `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable Gaussian blur with edge clamping.
pub fn gaussian_blur(img: &ImageGray, sigma: f64) -> ImageGray {
    if sigma <= 0.0 {
        return img.clone();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let (w, h) = (img.width as isize, img.height as isize);
    let mut tmp = ImageGray::new(img.width, img.height);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let xx = (x + i as isize - r).clamp(0, w - 1);
                acc += kv * img.get(xx as usize, y as usize);
            }
            tmp.set(x as usize, y as usize, acc);
        }
    }
    let mut out = ImageGray::new(img.width, img.height);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let yy = (y + i as isize - r).clamp(0, h - 1);
                acc += kv * tmp.get(x as usize, yy as usize);
            }
            out.set(x as usize, y as usize, acc);
        }
    }
    out
}

/// Blur, then additive Gaussian noise, then quantization, then clamping.
///
/// Noise is drawn from a ChaCha8 generator seeded with `seed`
/// (`ChaCha8Rng::seed_from_u64`), one sample per pixel in row-major order.
pub fn degrade(img: &ImageGray, spec: &SensorSpec, seed: u64) -> Result<ImageGray> {
    spec.validate()?;
    let mut out = gaussian_blur(img, spec.blur_sigma);
    if spec.gaussian_noise_sigma > 0.0 {
        let normal = Normal::new(0.0, spec.gaussian_noise_sigma)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in out.data_mut() {
            *v += normal.sample(&mut rng);
        }
    }
    for v in out.data_mut() {
        *v = quantize(*v, spec.bit_depth);
    }
    out.clamp_unit();
    Ok(out)
}

fn is_png(bytes: &[u8]) -> bool {
    bytes.starts_with(b"\x89PNG\r\n\x1a\n")
}

/// Loads an 8- or 16-bit grayscale PGM (P5) or PNG file.
pub fn load_image(path: impl AsRef<Path>) -> Result<ImageGray> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(b"P5") {
        decode_pgm(&bytes)
    } else if is_png(&bytes) {
        decode_png(&bytes)
    } else if bytes.starts_with(b"P6") || bytes.starts_with(b"P3") {
        Err(Error::ColorImage(format!("{} is a color PPM", path.display())))
    } else {
        Err(Error::UnsupportedFormat(format!(
            "{}: expected binary PGM (P5) or PNG",
            path.display()
        )))
    }
}

fn decode_png(bytes: &[u8]) -> Result<ImageGray> {
    let dynimg = image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map_err(|e| Error::UnsupportedFormat(e.to_string()))?;
    let (w, h) = (dynimg.width() as usize, dynimg.height() as usize);
    match dynimg {
        DynamicImage::ImageLuma8(buf) => ImageGray::from_vec(
            w,
            h,
            buf.into_raw().into_iter().map(|v| v as f64 / 255.0).collect(),
        ),
        DynamicImage::ImageLuma16(buf) => ImageGray::from_vec(
            w,
            h,
            buf.into_raw()
                .into_iter()
                .map(|v| v as f64 / 65535.0)
                .collect(),
        ),
        other => Err(Error::ColorImage(format!(
            "PNG color type {:?} is not single-channel grayscale",
            other.color()
        ))),
    }
}

fn decode_pgm(bytes: &[u8]) -> Result<ImageGray> {
    let bad = |msg: &str| Error::UnsupportedFormat(format!("malformed PGM: {msg}"));
    // Header: magic, width, height, maxval, separated by whitespace and comments.
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                Some(c) if c.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(bad("truncated header")),
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("expected a number"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("number out of range"))?;
    }
    // Exactly one whitespace byte separates the header from the raster.
    if !bytes.get(pos).is_some_and(|c| c.is_ascii_whitespace()) {
        return Err(bad("missing raster separator"));
    }
    pos += 1;
    let [w, h, maxval] = fields;
    if w == 0 || h == 0 || maxval == 0 || maxval > 65535 {
        return Err(bad("invalid dimensions or maxval"));
    }
    let raster = &bytes[pos..];
    let n = w * h;
    let data: Vec<f64> = if maxval < 256 {
        if raster.len() < n {
            return Err(bad("truncated raster"));
        }
        raster[..n].iter().map(|&v| v as f64 / maxval as f64).collect()
    } else {
        if raster.len() < 2 * n {
            return Err(bad("truncated raster"));
        }
        raster[..2 * n]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / maxval as f64)
            .collect()
    };
    ImageGray::from_vec(w, h, data)
}

/// Writes the image as PGM (`.pgm`) or PNG (any other extension) with
/// samples `round(intensity * (2^bit_depth - 1))`.
pub fn save_image(img: &ImageGray, path: impl AsRef<Path>, bit_depth: u32) -> Result<()> {
    let path = path.as_ref();
    if bit_depth != 8 && bit_depth != 16 {
        return Err(Error::InvalidArgument(format!(
            "save bit depth must be 8 or 16, got {bit_depth}"
        )));
    }
    let is_pgm = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("pgm"));
    let bytes = if is_pgm {
        encode_pgm(img, bit_depth)
    } else {
        encode_png(img, bit_depth)?
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn encode_pgm(img: &ImageGray, bit_depth: u32) -> Vec<u8> {
    let max = if bit_depth == 8 { 255u32 } else { 65535 };
    let mut out = format!("P5\n{} {}\n{}\n", img.width, img.height, max).into_bytes();
    for &v in &img.data {
        let s = to_sample(v, max as f64);
        if bit_depth == 8 {
            out.push(s as u8);
        } else {
            out.extend_from_slice(&(s as u16).to_be_bytes());
        }
    }
    out
}

fn encode_png(img: &ImageGray, bit_depth: u32) -> Result<Vec<u8>> {
    let (w, h) = (img.width as u32, img.height as u32);
    let dynimg = if bit_depth == 8 {
        let raw: Vec<u8> = img.data.iter().map(|&v| to_sample(v, 255.0) as u8).collect();
        DynamicImage::ImageLuma8(ImageBuffer::<Luma<u8>, _>::from_raw(w, h, raw).expect("size"))
    } else {
        let raw: Vec<u16> = img
            .data
            .iter()
            .map(|&v| to_sample(v, 65535.0) as u16)
            .collect();
        DynamicImage::ImageLuma16(ImageBuffer::<Luma<u16>, _>::from_raw(w, h, raw).expect("size"))
    };
    let mut buf = Cursor::new(Vec::new());
    dynimg
        .write_to(&mut buf, ImageFormat::Png)
        .map_err(|e| Error::UnsupportedFormat(e.to_string()))?;
    Ok(buf.into_inner())
}

/// Paints a disc of constant `value` (anti-aliased over one pixel), used to
/// simulate occlusion by dust or debris.
pub fn occlude_disc(img: &mut ImageGray, cx: f64, cy: f64, radius: f64, value: f64) {
    let x0 = (cx - radius - 1.0).floor().max(0.0) as usize;
    let y0 = (cy - radius - 1.0).floor().max(0.0) as usize;
    let x1 = ((cx + radius + 1.0).ceil().max(0.0) as usize).min(img.width.saturating_sub(1));
    let y1 = ((cy + radius + 1.0).ceil().max(0.0) as usize).min(img.height.saturating_sub(1));
    for y in y0..=y1 {
        for x in x0..=x1 {
            let d = (x as f64 - cx).hypot(y as f64 - cy) - radius;
            let cov = (0.5 - d).clamp(0.0, 1.0);
            if cov > 0.0 {
                let old = img.get(x, y);
                img.set(x, y, old * (1.0 - cov) + value * cov);
            }
        }
    }
}
