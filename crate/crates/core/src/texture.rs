//! Texture transfer: normal-difference masks, masked compositing of generated
//! views, and projection of the composited views onto vertex colors.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::index::KdTree;
use crate::geometry::{rasterize, render_view, Channel, ImageGrid, TriangleMesh, ViewSpec};
use crate::{Error, Result, Vec3};

pub const N_VIEWS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TextureParams {
    pub tau_texture: f64,
    /// Exponent on `n · view_dir` when blending views.
    pub blend_power: f64,
    pub image_size: usize,
    pub half_width: f64,
}

impl Default for TextureParams {
    fn default() -> Self {
        Self {
            tau_texture: 0.005,
            blend_power: 2.0,
            image_size: 128,
            half_width: 1.0,
        }
    }
}

impl TextureParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_texture > 0.0) {
            return Err(Error::InvalidParam("tau_texture must be positive".into()));
        }
        if !(self.blend_power >= 0.0) {
            return Err(Error::InvalidParam("blend_power must be non-negative".into()));
        }
        self.views().first().map(|v| v.validate()).unwrap_or(Ok(()))
    }

    pub fn views(&self) -> Vec<ViewSpec> {
        ViewSpec::canonical_six(self.image_size, self.half_width)
    }
}

/// Six canonical views of one mesh: RGB color renders and normal renders.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiViewSet {
    pub views: Vec<ViewSpec>,
    pub images: Vec<ImageGrid>,
    pub normals: Vec<ImageGrid>,
}

impl MultiViewSet {
    pub fn render(mesh: &TriangleMesh, views: &[ViewSpec]) -> Result<Self> {
        check_views(views)?;
        let (images, normals) = views
            .par_iter()
            .map(|v| (render_view(mesh, v, Channel::Color), render_view(mesh, v, Channel::Normal)))
            .unzip();
        Ok(Self {
            views: views.to_vec(),
            images,
            normals,
        })
    }

    pub fn validate(&self) -> Result<()> {
        check_views(&self.views)?;
        check_images(&self.views, &self.images, 3)?;
        check_images(&self.views, &self.normals, 3)
    }
}

fn check_views(views: &[ViewSpec]) -> Result<()> {
    if views.len() != N_VIEWS {
        return Err(Error::ShapeMismatch(format!("{} views, need {N_VIEWS}", views.len())));
    }
    views.iter().try_for_each(|v| v.validate())
}

fn check_images(views: &[ViewSpec], images: &[ImageGrid], channels: usize) -> Result<()> {
    if images.len() != views.len() {
        return Err(Error::ShapeMismatch(format!("{} images for {} views", images.len(), views.len())));
    }
    for (v, img) in views.iter().zip(images) {
        let n = v.image_size;
        if img.height != n || img.width != n || img.channels != channels {
            return Err(Error::ShapeMismatch(format!(
                "image {}x{}x{} for a {n}px view",
                img.height, img.width, img.channels
            )));
        }
    }
    Ok(())
}

/// Pixels whose rendered normal changes by more than `tau_texture` in any
/// channel.
pub fn normal_diff_masks(
    src: &TriangleMesh,
    edited: &TriangleMesh,
    views: &[ViewSpec],
    params: &TextureParams,
) -> Result<Vec<ImageGrid>> {
    check_views(views)?;
    params.validate()?;
    Ok(views
        .par_iter()
        .map(|v| {
            let a = render_view(src, v, Channel::Normal);
            let b = render_view(edited, v, Channel::Normal);
            diff_mask(&a, &b, params.tau_texture)
        })
        .collect())
}

pub fn diff_mask(a: &ImageGrid, b: &ImageGrid, tau: f64) -> ImageGrid {
    let mut m = ImageGrid::new(a.height, a.width, 1);
    for j in 0..a.n_pixels() {
        let d = a
            .pixel(j)
            .iter()
            .zip(b.pixel(j))
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        if d > tau {
            m.pixels[j] = 1.0;
        }
    }
    m
}

/// `mask · generated + (1 − mask) · src`, selected per pixel so unmasked
/// pixels are copied bit for bit.
pub fn composite_views(src: &MultiViewSet, generated: &[ImageGrid], masks: &[ImageGrid]) -> Result<Vec<ImageGrid>> {
    check_images(&src.views, &src.images, 3)?;
    check_images(&src.views, generated, 3)?;
    check_images(&src.views, masks, 1)?;
    if masks.iter().any(|m| !m.is_binary()) {
        return Err(Error::NonBinaryMask);
    }
    Ok(src
        .images
        .iter()
        .zip(generated)
        .zip(masks)
        .map(|((s, g), m)| {
            let mut out = s.clone();
            for j in 0..m.n_pixels() {
                if m.pixels[j] != 0.0 {
                    out.pixels[j * 3..j * 3 + 3].copy_from_slice(g.pixel(j));
                }
            }
            out
        })
        .collect())
}

/// Per-vertex colors blended from the views that see each vertex; vertices no
/// view sees take the color of the nearest colored vertex.
pub fn project_texture(
    mesh: &TriangleMesh,
    views: &[ViewSpec],
    images: &[ImageGrid],
    params: &TextureParams,
) -> Result<TriangleMesh> {
    if mesh.is_empty() {
        return Err(Error::NoSurface);
    }
    check_views(views)?;
    check_images(views, images, 3)?;
    params.validate()?;
    let normals = mesh.vertex_normals();
    let rasters: Vec<_> = views.par_iter().map(|v| rasterize(mesh, v)).collect();
    let blended: Vec<Option<[f64; 3]>> = mesh
        .vertices
        .par_iter()
        .zip(&normals)
        .map(|(p, n)| {
            let mut acc = [0.0; 3];
            let mut total = 0.0;
            for ((view, raster), img) in views.iter().zip(&rasters).zip(images) {
                let facing = n.dot(&view.view_dir());
                if facing <= 0.0 || !visible(p, view, &raster.depth) {
                    continue;
                }
                let w = facing.powf(params.blend_power);
                let (u, v) = view.project(p);
                let c = img.sample_bilinear(u, v);
                for k in 0..3 {
                    acc[k] += w * c[k];
                }
                total += w;
            }
            (total > 0.0).then(|| acc.map(|x| (x / total).clamp(0.0, 1.0)))
        })
        .collect();
    let colored: Vec<usize> = (0..blended.len()).filter(|&i| blended[i].is_some()).collect();
    let tree = KdTree::new(&colored.iter().map(|&i| mesh.vertices[i]).collect::<Vec<_>>());
    let colors = blended
        .iter()
        .zip(&mesh.vertices)
        .map(|(c, p)| match c {
            Some(c) => *c,
            None => tree
                .nearest(p)
                .map(|(k, _)| blended[colored[k]].expect("colored"))
                .unwrap_or([0.5; 3]),
        })
        .collect();
    let mut out = mesh.clone();
    out.vertex_colors = Some(colors);
    Ok(out)
}

/// Unoccluded when no drawn surface at the vertex's pixel is more than one
/// pixel width closer to the camera.
fn visible(p: &Vec3, view: &ViewSpec, zbuf: &[f64]) -> bool {
    let n = view.image_size;
    let (u, v) = view.project(p);
    let col = ((u * n as f64).floor() as isize).clamp(0, n as isize - 1) as usize;
    let row = ((v * n as f64).floor() as isize).clamp(0, n as isize - 1) as usize;
    let z = zbuf[row * n + col];
    let cell = 2.0 * view.half_width / n as f64;
    z == f64::NEG_INFINITY || view.depth(p) >= z - cell
}

/// Output of [`bake_texture`].
#[derive(Debug, Clone)]
pub struct Bake {
    pub masks: Vec<ImageGrid>,
    pub composited: Vec<ImageGrid>,
    pub mesh: TriangleMesh,
}

/// Masks from the geometry change, composite the generated views into the
/// source views, and project onto the edited mesh.
pub fn bake_texture(
    src: &TriangleMesh,
    edited: &TriangleMesh,
    src_views: &MultiViewSet,
    generated: &[ImageGrid],
    params: &TextureParams,
) -> Result<Bake> {
    let masks = normal_diff_masks(src, edited, &src_views.views, params)?;
    let composited = composite_views(src_views, generated, &masks)?;
    let mesh = project_texture(edited, &src_views.views, &composited, params)?;
    Ok(Bake { masks, composited, mesh })
}

/// Procedural stand-in for generated views: the source colors with channels
/// rotated and darkened, so any leak through the masks is visible.
pub fn recolor(img: &ImageGrid) -> ImageGrid {
    let mut out = img.clone();
    for j in 0..img.n_pixels() {
        let p = img.pixel(j);
        let q = [p[1], p[2], p[0]].map(|x| 0.8 * x + 0.1);
        out.pixels[j * 3..j * 3 + 3].copy_from_slice(&q);
    }
    out
}
