use serde::{Deserialize, Serialize};

use super::{ImageGrid, TriangleMesh, ViewSpec};
use crate::Vec3;

/// What a rendered pixel stores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Normal,
    Silhouette,
    Depth,
    Color,
}

pub const NO_FACE: u32 = u32::MAX;

/// Z-buffer result: per pixel the winning face, its depth and barycentrics.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub view: ViewSpec,
    /// Toward-camera depth; `-inf` where nothing was drawn.
    pub depth: Vec<f64>,
    pub face: Vec<u32>,
    pub bary: Vec<[f64; 3]>,
}

impl Raster {
    pub fn covered(&self, j: usize) -> bool {
        self.face[j] != NO_FACE
    }
}

/// Orthographic z-buffer rasterization sampled at pixel centers.
pub fn rasterize(mesh: &TriangleMesh, view: &ViewSpec) -> Raster {
    let n = view.image_size;
    let mut raster = Raster {
        view: *view,
        depth: vec![f64::NEG_INFINITY; n * n],
        face: vec![NO_FACE; n * n],
        bary: vec![[0.0; 3]; n * n],
    };
    let nf = n as f64;
    let screen: Vec<(f64, f64, f64)> = mesh
        .vertices
        .iter()
        .map(|v| {
            let (u, w) = view.project(v);
            (u * nf, w * nf, view.depth(v))
        })
        .collect();
    for (f, face) in mesh.faces.iter().enumerate() {
        let [a, b, c] = face.map(|i| screen[i as usize]);
        let area = edge(a, b, c.0, c.1);
        if area.abs() < 1e-14 {
            continue;
        }
        let x0 = (a.0.min(b.0).min(c.0) - 0.5).ceil().max(0.0) as usize;
        let y0 = (a.1.min(b.1).min(c.1) - 0.5).ceil().max(0.0) as usize;
        let x1 = (a.0.max(b.0).max(c.0) - 0.5).floor().min(nf - 1.0);
        let y1 = (a.1.max(b.1).max(c.1) - 0.5).floor().min(nf - 1.0);
        if x1 < 0.0 || y1 < 0.0 {
            continue;
        }
        for row in y0..=y1 as usize {
            let py = row as f64 + 0.5;
            for col in x0..=x1 as usize {
                let px = col as f64 + 0.5;
                let w0 = edge(b, c, px, py) / area;
                let w1 = edge(c, a, px, py) / area;
                let w2 = 1.0 - w0 - w1;
                if w0 < -1e-12 || w1 < -1e-12 || w2 < -1e-12 {
                    continue;
                }
                let z = w0 * a.2 + w1 * b.2 + w2 * c.2;
                let j = row * n + col;
                if z > raster.depth[j] {
                    raster.depth[j] = z;
                    raster.face[j] = f as u32;
                    raster.bary[j] = [w0, w1, w2];
                }
            }
        }
    }
    raster
}

fn edge(a: (f64, f64, f64), b: (f64, f64, f64), px: f64, py: f64) -> f64 {
    (b.0 - a.0) * (py - a.1) - (b.1 - a.1) * (px - a.0)
}

/// Renders one channel. Background is 0.5 gray for normals and 0 otherwise.
pub fn render_view(mesh: &TriangleMesh, view: &ViewSpec, channel: Channel) -> ImageGrid {
    let raster = rasterize(mesh, view);
    render_raster(mesh, &raster, channel)
}

pub(crate) fn render_raster(mesh: &TriangleMesh, raster: &Raster, channel: Channel) -> ImageGrid {
    let n = raster.view.image_size;
    let (channels, background) = match channel {
        Channel::Normal => (3, 0.5),
        Channel::Color => (3, 0.0),
        Channel::Silhouette | Channel::Depth => (1, 0.0),
    };
    let mut img = ImageGrid::filled(n, n, channels, background);
    let face_normals: Vec<Vec3> = match channel {
        Channel::Normal => (0..mesh.faces.len()).map(|f| mesh.face_normal(f)).collect(),
        _ => Vec::new(),
    };
    for j in 0..n * n {
        if !raster.covered(j) {
            continue;
        }
        let f = raster.face[j] as usize;
        let px = &mut img.pixels[j * channels..(j + 1) * channels];
        match channel {
            Channel::Normal => {
                for k in 0..3 {
                    px[k] = 0.5 * (face_normals[f][k] + 1.0);
                }
            }
            Channel::Silhouette => px[0] = 1.0,
            Channel::Depth => {
                px[0] = (0.5 * (raster.depth[j] / raster.view.half_width + 1.0)).clamp(0.0, 1.0);
            }
            Channel::Color => {
                let w = raster.bary[j];
                match &mesh.vertex_colors {
                    Some(colors) => {
                        let face = mesh.faces[f];
                        for k in 0..3 {
                            let v: f64 = (0..3).map(|m| w[m] * colors[face[m] as usize][k]).sum();
                            px[k] = v.clamp(0.0, 1.0);
                        }
                    }
                    None => px.fill(1.0),
                }
            }
        }
    }
    img
}
