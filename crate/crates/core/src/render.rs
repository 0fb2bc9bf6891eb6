//! Scatter rendering of 2D point clouds with optional model frames.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::Points;
use crate::error::{check_dim, Error};
use crate::geometry::Similitude;
use crate::model::IfsModel;
use crate::Result;

/// Fraction of the extent added on each side of the bounding box.
pub const MARGIN: f64 = 0.05;

pub const RED: [u8; 3] = [255, 0, 0];
pub const BLUE: [u8; 3] = [0, 0, 255];

/// RGB raster, rows top to bottom.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl RasterImage {
    /// Black image.
    pub fn new(width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidParameter("image dimensions must be at least 1".into()));
        }
        Ok(RasterImage { width, height, pixels: vec![0; width * height * 3] })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Row-major RGB bytes.
    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, col: usize, row: usize) -> [u8; 3] {
        let i = 3 * (row * self.width + col);
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set(&mut self, col: usize, row: usize, rgb: [u8; 3]) {
        let i = 3 * (row * self.width + col);
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    /// Number of pixels that are not black.
    pub fn lit_count(&self) -> usize {
        self.pixels.chunks_exact(3).filter(|p| p.iter().any(|v| *v != 0)).count()
    }

    /// Binary PPM (P6, maxval 255).
    pub fn to_ppm(&self) -> Vec<u8> {
        let header = format!("P6\n{} {}\n255\n", self.width, self.height);
        let mut out = Vec::with_capacity(header.len() + self.pixels.len());
        out.extend_from_slice(header.as_bytes());
        out.extend_from_slice(&self.pixels);
        out
    }

    /// Midpoint line between pixel centers; parts outside the image are
    /// dropped.
    pub fn draw_line(&mut self, from: (i64, i64), to: (i64, i64), rgb: [u8; 3]) {
        let (mut x, mut y) = from;
        let dx = (to.0 - x).abs();
        let dy = -(to.1 - y).abs();
        let sx = if x < to.0 { 1 } else { -1 };
        let sy = if y < to.1 { 1 } else { -1 };
        let mut err = dx + dy;
        loop {
            if x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height {
                self.set(x as usize, y as usize, rgb);
            }
            if x == to.0 && y == to.1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }
}

/// Square viewport: world coordinates to continuous pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Viewport {
    origin: [f64; 2],
    span: f64,
    resolution: usize,
}

impl Viewport {
    /// Fits the bounding box of `points` (uniform aspect, margin on every
    /// side). A zero extent is treated as one.
    pub fn fit(points: &Points, resolution: usize) -> Result<Self> {
        check_dim(2, points.dim())?;
        if resolution == 0 {
            return Err(Error::InvalidParameter("resolution must be at least 1".into()));
        }
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in points.rows() {
            for a in 0..2 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        if points.is_empty() {
            lo = [0.0; 2];
            hi = [0.0; 2];
        }
        let mut extent = (hi[0] - lo[0]).max(hi[1] - lo[1]);
        if !(extent > 0.0) {
            extent = 1.0;
        }
        let span = extent * (1.0 + 2.0 * MARGIN);
        let center = [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1])];
        Ok(Viewport { origin: [center[0] - 0.5 * span, center[1] - 0.5 * span], span, resolution })
    }

    /// Continuous `(col, row)`; row grows downward.
    pub fn to_pixel(&self, p: &[f64]) -> (f64, f64) {
        let r = self.resolution as f64;
        let col = (p[0] - self.origin[0]) / self.span * r;
        let row = r - (p[1] - self.origin[1]) / self.span * r;
        (col, row)
    }

    /// Pixel containing `p`, if inside the image.
    pub fn cell(&self, p: &[f64]) -> Option<(usize, usize)> {
        let (c, r) = self.to_pixel(p);
        let n = self.resolution as f64;
        if c >= 0.0 && r >= 0.0 && c < n && r < n {
            Some((c.floor() as usize, r.floor() as usize))
        } else {
            None
        }
    }
}

/// Clips the segment to a box slightly larger than the image so that far
/// endpoints cannot make line drawing arbitrarily long.
fn clip(a: (f64, f64), b: (f64, f64), size: f64) -> Option<((f64, f64), (f64, f64))> {
    let (lo, hi) = (-1.0, size + 1.0);
    let d = (b.0 - a.0, b.1 - a.1);
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for (p, q) in [(-d.0, a.0 - lo), (d.0, hi - a.0), (-d.1, a.1 - lo), (d.1, hi - a.1)] {
        if p == 0.0 {
            if q < 0.0 {
                return None;
            }
        } else {
            let t = q / p;
            if p < 0.0 {
                t0 = t0.max(t);
            } else {
                t1 = t1.min(t);
            }
        }
    }
    if t0 > t1 || !t0.is_finite() || !t1.is_finite() {
        return None;
    }
    Some(((a.0 + t0 * d.0, a.1 + t0 * d.1), (a.0 + t1 * d.0, a.1 + t1 * d.1)))
}

fn draw_frame(image: &mut RasterImage, view: &Viewport, frame: &Similitude, rgb: [u8; 3]) {
    let corners = [[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]];
    let mapped: Vec<(f64, f64)> = corners
        .iter()
        .map(|c| {
            let mut out = [0.0; 2];
            frame.apply_into(c, &mut out);
            view.to_pixel(&out)
        })
        .collect();
    let size = image.width() as f64;
    for i in 0..4 {
        if let Some((a, b)) = clip(mapped[i], mapped[(i + 1) % 4], size) {
            image.draw_line((a.0.floor() as i64, a.1.floor() as i64), (b.0.floor() as i64, b.1.floor() as i64), rgb);
        }
    }
}

/// Gray level of a pixel holding `count` points.
pub fn tone(count: u32, min_count: u32, max_count: u32) -> u8 {
    if count == 0 {
        return 0;
    }
    if max_count <= min_count {
        return 255;
    }
    let m = f64::from(min_count);
    let level = 255.0 * (f64::from(count) / m).ln_1p() / (f64::from(max_count) / m).ln_1p();
    (level.round() as u8).max(1)
}

/// Log-scaled density image of `points` over their bounding box. With a
/// model, the post-transformed bi-unit square is drawn in red and its image
/// under each component in blue.
pub fn render_scatter(points: &Points, resolution: usize, model: Option<&IfsModel>) -> Result<RasterImage> {
    let view = Viewport::fit(points, resolution)?;
    if let Some(m) = model {
        check_dim(2, m.dim())?;
    }
    let mut image = RasterImage::new(resolution, resolution)?;
    let mut counts = vec![0u32; resolution * resolution];
    for p in points.rows() {
        if let Some((c, r)) = view.cell(p) {
            counts[r * resolution + c] += 1;
        }
    }
    let min = counts.iter().copied().filter(|c| *c > 0).min().unwrap_or(0);
    let max = counts.iter().copied().max().unwrap_or(0);
    for (i, &c) in counts.iter().enumerate() {
        let g = tone(c, min, max);
        image.pixels[3 * i..3 * i + 3].copy_from_slice(&[g, g, g]);
    }
    if let Some(m) = model {
        draw_frame(&mut image, &view, m.post(), RED);
        for f in m.components() {
            draw_frame(&mut image, &view, &m.post().compose_unchecked(f), BLUE);
        }
    }
    Ok(image)
}
