//! Abstract-image rendering: a deterministic software rasterizer that turns a
//! world state into the color-labelled, robot-centric 60×60 view the value
//! network consumes, plus the Cartesian feature encoding used by the
//! pose-vector baseline.
//!
//! Coverage rule: a pixel belongs to a shape iff its center does, with
//! half-open spans ([enter, exit)) so shared edges never double-paint and
//! golden images are bit-exact. All raster math runs in coordinates relative
//! to the view center, which makes the image exactly invariant under rigid
//! translation of the whole scene.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{wrap_angle, Vec2};
use crate::physics::{gripper_parts, ObjectRole, PhysicsConfig, WorldState};

pub const IMAGE_WIDTH: usize = 60;
pub const IMAGE_HEIGHT: usize = 60;

/// Palette index of each role in the scene.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum PaletteColor {
    Background = 0,
    Boundary = 1,
    Gripper = 2,
    Desired = 3,
    Clutter = 4,
    Target = 5,
}

pub const PALETTE_LEN: usize = 6;

/// RGB bytes per palette entry: white, black, blue, green, red, dark green.
pub const PALETTE_RGB: [[u8; 3]; PALETTE_LEN] = [
    [255, 255, 255],
    [0, 0, 0],
    [0, 0, 255],
    [0, 255, 0],
    [255, 0, 0],
    [0, 100, 0],
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ViewConfig {
    /// Side length of the square window, meters.
    pub extent: f64,
    pub width: usize,
    pub height: usize,
}

impl Default for ViewConfig {
    fn default() -> Self {
        ViewConfig {
            extent: 0.6,
            width: IMAGE_WIDTH,
            height: IMAGE_HEIGHT,
        }
    }
}

/// A rendered color-labelled raster. Pixels are palette indices; RGB views
/// are derived on demand.
#[derive(Debug, Clone, PartialEq)]
pub struct AbstractImage {
    width: usize,
    height: usize,
    idx: Vec<u8>,
    pub meters_per_pixel: f64,
    /// World position of the view center (the gripper for network inputs).
    pub center: Vec2,
}

impl AbstractImage {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn color_at(&self, col: usize, row: usize) -> PaletteColor {
        match self.idx[row * self.width + col] {
            0 => PaletteColor::Background,
            1 => PaletteColor::Boundary,
            2 => PaletteColor::Gripper,
            3 => PaletteColor::Desired,
            4 => PaletteColor::Clutter,
            _ => PaletteColor::Target,
        }
    }

    pub fn indices(&self) -> &[u8] {
        &self.idx
    }

    pub fn count(&self, color: PaletteColor) -> usize {
        let c = color as u8;
        self.idx.iter().filter(|&&i| i == c).count()
    }

    /// Interleaved RGB bytes, row-major, length width × height × 3.
    pub fn rgb_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.idx.len() * 3);
        for &i in &self.idx {
            out.extend_from_slice(&PALETTE_RGB[i as usize]);
        }
        out
    }

    pub fn save_png(&self, path: &std::path::Path) -> Result<()> {
        let buf = self.rgb_bytes();
        image::save_buffer(
            path,
            &buf,
            self.width as u32,
            self.height as u32,
            image::ExtendedColorType::Rgb8,
        )
        .map_err(|e| Error::Config(format!("png write failed: {e}")))?;
        Ok(())
    }
}

/// Rasterizer over a square window centered on `center`. Works in
/// center-relative coordinates throughout.
struct Raster {
    width: usize,
    height: usize,
    mpp: f64,
    half_w: f64,
    half_h: f64,
    idx: Vec<u8>,
}

impl Raster {
    fn new(width: usize, height: usize, mpp: f64) -> Self {
        Raster {
            width,
            height,
            mpp,
            half_w: width as f64 * mpp / 2.0,
            half_h: height as f64 * mpp / 2.0,
            idx: vec![PaletteColor::Background as u8; width * height],
        }
    }

    fn row_center_y(&self, row: usize) -> f64 {
        self.half_h - (row as f64 + 0.5) * self.mpp
    }

    /// First column whose center x is ≥ `x` (may be out of range).
    fn col_at_or_after(&self, x: f64) -> i64 {
        ((x + self.half_w) / self.mpp - 0.5).ceil() as i64
    }

    /// First column whose center x is > `x`.
    fn col_after(&self, x: f64) -> i64 {
        ((x + self.half_w) / self.mpp - 0.5).floor() as i64 + 1
    }

    fn paint_span(&mut self, row: usize, start: i64, end_exclusive: i64, color: PaletteColor) {
        let s = start.max(0) as usize;
        let e = end_exclusive.clamp(0, self.width as i64) as usize;
        for col in s..e {
            self.idx[row * self.width + col] = color as u8;
        }
    }

    /// Convex polygon fill; vertices are center-relative.
    fn fill_polygon(&mut self, verts: &[Vec2], color: PaletteColor) {
        let n = verts.len();
        for row in 0..self.height {
            let y = self.row_center_y(row);
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            let mut crossings = 0;
            for i in 0..n {
                let a = verts[i];
                let b = verts[(i + 1) % n];
                if a.y == b.y {
                    continue;
                }
                let (y_min, y_max) = if a.y < b.y { (a.y, b.y) } else { (b.y, a.y) };
                // half-open in y so a vertex on a scanline counts once
                if y_min <= y && y < y_max {
                    let x = a.x + (y - a.y) / (b.y - a.y) * (b.x - a.x);
                    lo = lo.min(x);
                    hi = hi.max(x);
                    crossings += 1;
                }
            }
            if crossings >= 2 {
                self.paint_span(row, self.col_at_or_after(lo), self.col_at_or_after(hi), color);
            }
        }
    }

    /// Filled disc; pixel centers at distance ≤ radius (inclusive).
    fn fill_disc(&mut self, center: Vec2, radius: f64, color: PaletteColor) {
        for row in 0..self.height {
            let dy = self.row_center_y(row) - center.y;
            if dy.abs() > radius {
                continue;
            }
            let half_chord = (radius * radius - dy * dy).sqrt();
            let start = self.col_at_or_after(center.x - half_chord);
            let end = self.col_after(center.x + half_chord);
            self.paint_span(row, start, end, color);
        }
    }

    /// One-pixel-wide axis-aligned segment. The carrying pixel is the nearest
    /// cell index with half-ties to the lower index; the discontinuity then
    /// sits at cell centers, so lines on the centimeter grid stay stable
    /// under floating-point noise.
    fn line_vertical(&mut self, x: f64, y0: f64, y1: f64, color: PaletteColor) {
        let col = round_half_down((x + self.half_w) / self.mpp);
        if col < 0 || col >= self.width as i64 {
            return;
        }
        let (y_lo, y_hi) = if y0 < y1 { (y0, y1) } else { (y1, y0) };
        for row in 0..self.height {
            let y = self.row_center_y(row);
            if y_lo <= y && y <= y_hi {
                self.idx[row * self.width + col as usize] = color as u8;
            }
        }
    }

    fn line_horizontal(&mut self, y: f64, x0: f64, x1: f64, color: PaletteColor) {
        let row = round_half_down((self.half_h - y) / self.mpp);
        if row < 0 || row >= self.height as i64 {
            return;
        }
        let (x_lo, x_hi) = if x0 < x1 { (x0, x1) } else { (x1, x0) };
        let start = self.col_at_or_after(x_lo);
        let end = self.col_after(x_hi);
        self.paint_span(row as usize, start, end, color);
    }
}

fn round_half_down(t: f64) -> i64 {
    let f = t.floor();
    if t - f > 0.5 {
        f as i64 + 1
    } else {
        f as i64
    }
}

fn rasterize(
    w: &WorldState,
    center: Vec2,
    width: usize,
    height: usize,
    mpp: f64,
    phys: &PhysicsConfig,
) -> AbstractImage {
    let mut r = Raster::new(width, height, mpp);
    let rel = |p: Vec2| p - center;

    // paint order: target, boundary, clutter, desired, gripper
    r.fill_disc(rel(w.target.center), w.target.radius, PaletteColor::Target);

    let b = w.bounds;
    let (bl, tr) = (rel(Vec2::new(b.x_min, b.y_min)), rel(Vec2::new(b.x_max, b.y_max)));
    r.line_vertical(bl.x, bl.y, tr.y, PaletteColor::Boundary);
    r.line_vertical(tr.x, bl.y, tr.y, PaletteColor::Boundary);
    r.line_horizontal(bl.y, bl.x, tr.x, PaletteColor::Boundary);
    r.line_horizontal(tr.y, bl.x, tr.x, PaletteColor::Boundary);

    let draw_object = |r: &mut Raster, obj: &crate::physics::ObjectState, color: PaletteColor| {
        let verts: Vec<Vec2> = obj
            .shape
            .world_vertices(obj.pose)
            .into_iter()
            .map(rel)
            .collect();
        r.fill_polygon(&verts, color);
    };
    for obj in w.objects.iter().filter(|o| o.role == ObjectRole::Clutter) {
        draw_object(&mut r, obj, PaletteColor::Clutter);
    }
    for obj in w.objects.iter().filter(|o| o.role == ObjectRole::Desired) {
        draw_object(&mut r, obj, PaletteColor::Desired);
    }

    for (poly, local) in gripper_parts(phys, w.gripper.aperture) {
        let pose = w.gripper.pose.compose(local);
        let verts: Vec<Vec2> = poly.world_vertices(pose).into_iter().map(rel).collect();
        r.fill_polygon(&verts, PaletteColor::Gripper);
    }

    AbstractImage {
        width,
        height,
        idx: r.idx,
        meters_per_pixel: mpp,
        center,
    }
}

/// Render the robot-centric abstract image: an orthographic top view of the
/// configured extent centered at the gripper, axes world-aligned.
pub fn render_abstract(w: &WorldState, view: &ViewConfig, phys: &PhysicsConfig) -> AbstractImage {
    let mpp = view.extent / view.width as f64;
    rasterize(w, w.gripper.pose.position, view.width, view.height, mpp, phys)
}

/// Full-surface debug view at higher resolution, centered on the surface.
pub fn render_debug(w: &WorldState, phys: &PhysicsConfig) -> AbstractImage {
    let side = 300;
    let extent = (w.bounds.x_max - w.bounds.x_min).max(w.bounds.y_max - w.bounds.y_min) * 1.2;
    rasterize(w, w.bounds.center(), side, side, extent / side as f64, phys)
}

/// Cartesian feature vector for the pose-based baseline: absolute gripper
/// pose + binary gripper state, target offset, then per-object offsets
/// (desired first, clutter in index order). Positions are normalized by the
/// surface half-width; angles stay in radians.
pub fn encode_caba_features(w: &WorldState, n: usize) -> Result<Vec<f32>> {
    if w.objects.len() != n {
        return Err(Error::ArityMismatch {
            expected: n,
            found: w.objects.len(),
        });
    }
    let hw = w.bounds.half_width();
    let c = w.bounds.center();
    let ee = w.gripper.pose.position;
    let mut out = Vec::with_capacity(6 + 3 * n);
    out.push(((ee.x - c.x) / hw) as f32);
    out.push(((ee.y - c.y) / hw) as f32);
    out.push(w.gripper.pose.angle as f32);
    out.push(if w.gripper.aperture >= 0.5 { 1.0 } else { 0.0 });
    out.push(((w.target.center.x - ee.x) / hw) as f32);
    out.push(((w.target.center.y - ee.y) / hw) as f32);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (w.objects[i].role != ObjectRole::Desired, i));
    for i in order {
        let o = &w.objects[i];
        out.push(((o.pose.position.x - ee.x) / hw) as f32);
        out.push(((o.pose.position.y - ee.y) / hw) as f32);
        out.push(wrap_angle(o.pose.angle - w.gripper.pose.angle) as f32);
    }
    Ok(out)
}
