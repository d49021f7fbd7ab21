//! Meshes, sampling, signed distance fields, marching cubes, Chamfer distance,
//! box cropping and an orthographic rasterizer.

mod chamfer;
mod crop;
pub mod index;
pub mod io;
mod marching_cubes;
mod mc_table;
mod mesh;
mod raster;
mod sampling;
pub mod sdf;

pub use chamfer::chamfer_distance;
pub use crop::{crop_mesh, crop_mesh_outside};
pub use marching_cubes::{marching_cubes, marching_cubes_banded};
pub use mesh::TriangleMesh;
pub use raster::{rasterize, render_view, Channel, Raster};
pub use sampling::sample_surface;
pub use sdf::{scene_sdf, Primitive, PrimitiveScene, SdfGrid};

use serde::{Deserialize, Serialize};

use crate::{Error, Result, Vec3};

/// A point on a surface together with its unit normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceSample {
    pub position: Vec3,
    pub normal: Vec3,
}

/// Axis-aligned box; membership tests treat it as closed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min_corner: [f64; 3],
    pub max_corner: [f64; 3],
}

impl BoundingBox {
    pub fn new(min_corner: Vec3, max_corner: Vec3) -> Result<Self> {
        if (0..3).any(|k| !(min_corner[k] <= max_corner[k])) {
            return Err(Error::InvalidParam(format!(
                "box min {min_corner:?} exceeds max {max_corner:?}"
            )));
        }
        Ok(Self {
            min_corner: min_corner.into(),
            max_corner: max_corner.into(),
        })
    }

    pub fn from_center_half(center: Vec3, half: Vec3) -> Result<Self> {
        Self::new(center - half, center + half)
    }

    /// Tight box around a point set; `None` when the set is empty.
    pub fn around<'a>(points: impl IntoIterator<Item = &'a Vec3>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = *it.next()?;
        let (mut lo, mut hi) = (first, first);
        for p in it {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        Some(Self {
            min_corner: lo.into(),
            max_corner: hi.into(),
        })
    }

    pub fn min(&self) -> Vec3 {
        Vec3::from(self.min_corner)
    }

    pub fn max(&self) -> Vec3 {
        Vec3::from(self.max_corner)
    }

    pub fn center(&self) -> Vec3 {
        (self.min() + self.max()) * 0.5
    }

    pub fn size(&self) -> Vec3 {
        self.max() - self.min()
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|k| p[k] >= self.min_corner[k] && p[k] <= self.max_corner[k])
    }

    pub fn inflate(&self, by: f64) -> Self {
        let d = Vec3::repeat(by);
        Self {
            min_corner: (self.min() - d).into(),
            max_corner: (self.max() + d).into(),
        }
    }

    pub fn union(&self, other: &BoundingBox) -> Self {
        Self {
            min_corner: self.min().inf(&other.min()).into(),
            max_corner: self.max().sup(&other.max()).into(),
        }
    }

    pub fn volume(&self) -> f64 {
        let s = self.size();
        s.x * s.y * s.z
    }

    pub fn corners(&self) -> [Vec3; 8] {
        let (a, b) = (self.min(), self.max());
        std::array::from_fn(|i| {
            Vec3::new(
                if i & 1 == 0 { a.x } else { b.x },
                if i & 2 == 0 { a.y } else { b.y },
                if i & 4 == 0 { a.z } else { b.z },
            )
        })
    }
}

/// Orthographic camera looking at the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ViewSpec {
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    pub image_size: usize,
    pub half_width: f64,
}

impl Default for ViewSpec {
    fn default() -> Self {
        Self::front(64)
    }
}

impl ViewSpec {
    pub fn new(azimuth_deg: f64, elevation_deg: f64, image_size: usize, half_width: f64) -> Result<Self> {
        let v = Self {
            azimuth_deg,
            elevation_deg,
            image_size,
            half_width,
        };
        v.validate()?;
        Ok(v)
    }

    pub fn front(image_size: usize) -> Self {
        Self {
            azimuth_deg: 0.0,
            elevation_deg: 0.0,
            image_size,
            half_width: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size < 8 {
            return Err(Error::InvalidParam(format!(
                "image_size {} below 8",
                self.image_size
            )));
        }
        if !(self.half_width > 0.0) {
            return Err(Error::InvalidParam("half_width must be positive".into()));
        }
        Ok(())
    }

    /// The six canonical views: four horizontal azimuths, then top and bottom.
    pub fn canonical_six(image_size: usize, half_width: f64) -> Vec<ViewSpec> {
        [(0.0, 0.0), (90.0, 0.0), (180.0, 0.0), (270.0, 0.0), (0.0, 90.0), (0.0, 270.0)]
            .into_iter()
            .map(|(azimuth_deg, elevation_deg)| ViewSpec {
                azimuth_deg,
                elevation_deg,
                image_size,
                half_width,
            })
            .collect()
    }

    /// Unit vector from the scene toward the camera.
    pub fn view_dir(&self) -> Vec3 {
        let (az, el) = (self.azimuth_deg.to_radians(), self.elevation_deg.to_radians());
        Vec3::new(az.sin() * el.cos(), el.sin(), az.cos() * el.cos())
    }

    /// Image-plane basis `(right, up)`.
    pub fn basis(&self) -> (Vec3, Vec3) {
        let az = self.azimuth_deg.to_radians();
        let right = Vec3::new(az.cos(), 0.0, -az.sin());
        let up = self.view_dir().cross(&right);
        (right, up)
    }

    /// Normalized image coordinates in `[0,1]²` (u to the right, v downward).
    pub fn project(&self, p: &Vec3) -> (f64, f64) {
        let (right, up) = self.basis();
        let u = 0.5 * (p.dot(&right) / self.half_width + 1.0);
        let v = 0.5 * (1.0 - p.dot(&up) / self.half_width);
        (u, v)
    }

    /// Signed depth toward the camera; larger is closer.
    pub fn depth(&self, p: &Vec3) -> f64 {
        p.dot(&self.view_dir())
    }

    /// Pixel-center coordinates of pixel `j` in normalized image space.
    pub fn pixel_center(&self, j: usize) -> (f64, f64) {
        let n = self.image_size;
        let (row, col) = (j / n, j % n);
        ((col as f64 + 0.5) / n as f64, (row as f64 + 0.5) / n as f64)
    }

    /// Short name used for file naming, e.g. `az090_el000`.
    pub fn tag(&self) -> String {
        format!(
            "az{:03}_el{:03}",
            self.azimuth_deg.round() as i64,
            self.elevation_deg.round() as i64
        )
    }
}

/// Row-major `height × width × channels` float raster.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub pixels: Vec<f64>,
}

impl ImageGrid {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, 0.0)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self {
            height,
            width,
            channels,
            pixels: vec![value; height * width * channels],
        }
    }

    pub fn from_pixels(height: usize, width: usize, channels: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != height * width * channels {
            return Err(Error::ShapeMismatch(format!(
                "{} pixels for {height}x{width}x{channels}",
                pixels.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            pixels,
        })
    }

    pub fn n_pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn get(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.pixels[(row * self.width + col) * self.channels + ch]
    }

    pub fn set(&mut self, row: usize, col: usize, ch: usize, value: f64) {
        self.pixels[(row * self.width + col) * self.channels + ch] = value;
    }

    pub fn pixel(&self, j: usize) -> &[f64] {
        &self.pixels[j * self.channels..(j + 1) * self.channels]
    }

    pub fn same_shape(&self, other: &ImageGrid) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    pub fn is_binary(&self) -> bool {
        self.pixels.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    /// Number of nonzero entries; for masks, the count of set pixels.
    pub fn count_nonzero(&self) -> usize {
        self.pixels.iter().filter(|&&v| v != 0.0).count()
    }

    /// Square (Chebyshev) dilation of the nonzero set; the result is binary
    /// per channel.
    pub fn dilated(&self, radius: usize) -> ImageGrid {
        let (h, w) = (self.height, self.width);
        let mut out = ImageGrid::new(h, w, self.channels);
        for row in 0..h {
            for col in 0..w {
                for ch in 0..self.channels {
                    let hit = (row.saturating_sub(radius)..=(row + radius).min(h - 1)).any(|r| {
                        (col.saturating_sub(radius)..=(col + radius).min(w - 1)).any(|c| self.get(r, c, ch) != 0.0)
                    });
                    if hit {
                        out.set(row, col, ch, 1.0);
                    }
                }
            }
        }
        out
    }

    /// Bilinear lookup at normalized coordinates, clamped at the border.
    pub fn sample_bilinear(&self, u: f64, v: f64) -> Vec<f64> {
        let x = (u * self.width as f64 - 0.5).clamp(0.0, (self.width - 1) as f64);
        let y = (v * self.height as f64 - 0.5).clamp(0.0, (self.height - 1) as f64);
        let (x0, y0) = (x.floor() as usize, y.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(self.width - 1), (y0 + 1).min(self.height - 1));
        let (fx, fy) = (x - x0 as f64, y - y0 as f64);
        (0..self.channels)
            .map(|c| {
                let a = self.get(y0, x0, c) * (1.0 - fx) + self.get(y0, x1, c) * fx;
                let b = self.get(y1, x0, c) * (1.0 - fx) + self.get(y1, x1, c) * fx;
                a * (1.0 - fy) + b * fy
            })
            .collect()
    }
}
