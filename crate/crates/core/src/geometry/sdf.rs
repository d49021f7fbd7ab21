//! Signed distance fields: exact CSG primitives, sampled grids and a generic
//! mesh distance.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::index::KdTree;
use super::{marching_cubes, BoundingBox, SurfaceSample, TriangleMesh};
use crate::{Error, Result, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Primitive {
    Sphere { center: [f64; 3], radius: f64 },
    Box { center: [f64; 3], half_extents: [f64; 3] },
    Capsule { a: [f64; 3], b: [f64; 3], radius: f64 },
}

impl Primitive {
    pub fn sphere(center: Vec3, radius: f64) -> Self {
        Primitive::Sphere {
            center: center.into(),
            radius,
        }
    }

    pub fn cuboid(center: Vec3, half_extents: Vec3) -> Self {
        Primitive::Box {
            center: center.into(),
            half_extents: half_extents.into(),
        }
    }

    pub fn capsule(a: Vec3, b: Vec3, radius: f64) -> Self {
        Primitive::Capsule {
            a: a.into(),
            b: b.into(),
            radius,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Primitive::Sphere { radius, .. } => radius > 0.0,
            Primitive::Box { half_extents, .. } => half_extents.iter().all(|&h| h > 0.0),
            Primitive::Capsule { radius, .. } => radius > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParam(format!("degenerate primitive {self:?}")))
        }
    }

    pub fn sdf(&self, p: &Vec3) -> f64 {
        match *self {
            Primitive::Sphere { center, radius } => (p - Vec3::from(center)).norm() - radius,
            Primitive::Box { center, half_extents } => {
                let q = (p - Vec3::from(center)).abs() - Vec3::from(half_extents);
                q.sup(&Vec3::zeros()).norm() + q.max().min(0.0)
            }
            Primitive::Capsule { a, b, radius } => {
                let (a, b) = (Vec3::from(a), Vec3::from(b));
                (p - closest_on_segment(&a, &b, p)).norm() - radius
            }
        }
    }

    pub fn area(&self) -> f64 {
        match *self {
            Primitive::Sphere { radius, .. } => 4.0 * PI * radius * radius,
            Primitive::Box { half_extents: h, .. } => 8.0 * (h[0] * h[1] + h[1] * h[2] + h[0] * h[2]),
            Primitive::Capsule { a, b, radius } => {
                let len = (Vec3::from(b) - Vec3::from(a)).norm();
                2.0 * PI * radius * len + 4.0 * PI * radius * radius
            }
        }
    }

    pub fn bounding_box(&self) -> BoundingBox {
        let (lo, hi) = match *self {
            Primitive::Sphere { center, radius } => {
                let c = Vec3::from(center);
                (c - Vec3::repeat(radius), c + Vec3::repeat(radius))
            }
            Primitive::Box { center, half_extents } => {
                let (c, h) = (Vec3::from(center), Vec3::from(half_extents));
                (c - h, c + h)
            }
            Primitive::Capsule { a, b, radius } => {
                let (a, b) = (Vec3::from(a), Vec3::from(b));
                (a.inf(&b) - Vec3::repeat(radius), a.sup(&b) + Vec3::repeat(radius))
            }
        };
        BoundingBox {
            min_corner: lo.into(),
            max_corner: hi.into(),
        }
    }

    /// Uniform point on this primitive's own surface.
    fn sample(&self, rng: &mut ChaCha8Rng) -> SurfaceSample {
        match *self {
            Primitive::Sphere { center, radius } => {
                let n = unit_normal(rng);
                SurfaceSample {
                    position: Vec3::from(center) + n * radius,
                    normal: n,
                }
            }
            Primitive::Box { center, half_extents: h } => {
                let areas = [h[1] * h[2], h[0] * h[2], h[0] * h[1]];
                let total: f64 = areas.iter().sum();
                let mut x = rng.random::<f64>() * total;
                let mut axis = 2;
                for (k, a) in areas.iter().enumerate() {
                    if x < *a {
                        axis = k;
                        break;
                    }
                    x -= a;
                }
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                let mut local = Vec3::zeros();
                for k in 0..3 {
                    local[k] = if k == axis {
                        sign * h[k]
                    } else {
                        rng.random_range(-h[k]..=h[k])
                    };
                }
                let mut normal = Vec3::zeros();
                normal[axis] = sign;
                SurfaceSample {
                    position: Vec3::from(center) + local,
                    normal,
                }
            }
            Primitive::Capsule { a, b, radius } => {
                let (a, b) = (Vec3::from(a), Vec3::from(b));
                let axis = b - a;
                let len = axis.norm();
                let cyl = 2.0 * PI * radius * len;
                let total = cyl + 4.0 * PI * radius * radius;
                if rng.random::<f64>() * total < cyl {
                    let dir = axis / len;
                    let (e1, e2) = orthonormal_pair(&dir);
                    let phi = rng.random::<f64>() * 2.0 * PI;
                    let n = e1 * phi.cos() + e2 * phi.sin();
                    let s = rng.random::<f64>();
                    SurfaceSample {
                        position: a + axis * s + n * radius,
                        normal: n,
                    }
                } else {
                    let n = unit_normal(rng);
                    let cap = if n.dot(&axis) >= 0.0 { b } else { a };
                    SurfaceSample {
                        position: cap + n * radius,
                        normal: n,
                    }
                }
            }
        }
    }
}

fn closest_on_segment(a: &Vec3, b: &Vec3, p: &Vec3) -> Vec3 {
    let ab = b - a;
    let denom = ab.norm_squared();
    if denom == 0.0 {
        return *a;
    }
    a + ab * ((p - a).dot(&ab) / denom).clamp(0.0, 1.0)
}

fn unit_normal(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        let len = v.norm();
        if len > 1e-9 {
            return v / len;
        }
    }
}

fn orthonormal_pair(d: &Vec3) -> (Vec3, Vec3) {
    let helper = if d.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let e1 = d.cross(&helper).normalize();
    (e1, d.cross(&e1))
}

/// CSG union of primitives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimitiveScene {
    pub primitives: Vec<Primitive>,
}

impl PrimitiveScene {
    pub fn new(primitives: Vec<Primitive>) -> Result<Self> {
        if primitives.is_empty() {
            return Err(Error::NoPrimitives);
        }
        for p in &primitives {
            p.validate()?;
        }
        Ok(Self { primitives })
    }

    pub fn validate(&self) -> Result<()> {
        if self.primitives.is_empty() {
            return Err(Error::NoPrimitives);
        }
        self.primitives.iter().try_for_each(Primitive::validate)
    }

    /// One to three random primitives kept inside `[-0.85, 0.85]³`.
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let count = rng.random_range(1..=3);
        let mut primitives = Vec::with_capacity(count);
        for _ in 0..count {
            let c = Vec3::new(
                rng.random_range(-0.4..0.4),
                rng.random_range(-0.4..0.4),
                rng.random_range(-0.4..0.4),
            );
            let p = match rng.random_range(0..3) {
                0 => Primitive::sphere(c, rng.random_range(0.2..0.4)),
                1 => Primitive::cuboid(
                    c,
                    Vec3::new(
                        rng.random_range(0.12..0.4),
                        rng.random_range(0.12..0.4),
                        rng.random_range(0.12..0.4),
                    ),
                ),
                _ => {
                    let d = unit_normal(&mut rng) * rng.random_range(0.1..0.25);
                    Primitive::capsule(c - d, c + d, rng.random_range(0.12..0.25))
                }
            };
            primitives.push(p);
        }
        Self { primitives }
    }

    pub fn bounding_box(&self) -> BoundingBox {
        let corners: Vec<Vec3> = self
            .primitives
            .iter()
            .flat_map(|p| {
                let b = p.bounding_box();
                [b.min(), b.max()]
            })
            .collect();
        BoundingBox::around(corners.iter()).expect("scene has primitives")
    }

    /// Samples on the union surface, drawn exactly: points of one primitive
    /// that fall strictly inside another are rejected.
    pub fn sample_surface(&self, n: usize, seed: u64) -> Result<Vec<SurfaceSample>> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cdf = Vec::with_capacity(self.primitives.len());
        let mut total = 0.0;
        for p in &self.primitives {
            total += p.area();
            cdf.push(total);
        }
        let mut out = Vec::with_capacity(n);
        let max_draws = 1000 * n.max(1);
        for _ in 0..max_draws {
            if out.len() == n {
                break;
            }
            let x = rng.random::<f64>() * total;
            let k = cdf.partition_point(|&c| c <= x).min(cdf.len() - 1);
            let s = self.primitives[k].sample(&mut rng);
            let hidden = self
                .primitives
                .iter()
                .enumerate()
                .any(|(j, p)| j != k && p.sdf(&s.position) < 0.0);
            if !hidden {
                out.push(s);
            }
        }
        if out.len() < n {
            return Err(Error::NoSurface);
        }
        Ok(out)
    }

    /// Marching-cubes mesh of the scene over `[-1,1]³`.
    pub fn mesh(&self, resolution: usize) -> Result<TriangleMesh> {
        self.validate()?;
        let grid = SdfGrid::from_fn(resolution, Vec3::repeat(-1.0), Vec3::repeat(2.0), |p| {
            scene_sdf(self, p)
        })?;
        marching_cubes(&grid, 0.0)
    }
}

/// Exact for a single primitive; min-union otherwise.
pub fn scene_sdf(scene: &PrimitiveScene, q: &Vec3) -> f64 {
    scene
        .primitives
        .iter()
        .map(|p| p.sdf(q))
        .fold(f64::INFINITY, f64::min)
}

/// Signed distances sampled on a regular lattice; x varies fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct SdfGrid {
    pub resolution: usize,
    pub origin: Vec3,
    pub extent: Vec3,
    pub values: Vec<f64>,
}

impl SdfGrid {
    pub fn new(resolution: usize, origin: Vec3, extent: Vec3, values: Vec<f64>) -> Result<Self> {
        if resolution < 2 {
            return Err(Error::InvalidParam(format!("grid resolution {resolution} below 2")));
        }
        if (0..3).any(|k| !(extent[k] > 0.0)) {
            return Err(Error::InvalidParam("grid extent must be positive".into()));
        }
        if values.len() != resolution.pow(3) {
            return Err(Error::ShapeMismatch(format!(
                "{} values for resolution {resolution}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParam("non-finite grid value".into()));
        }
        Ok(Self {
            resolution,
            origin,
            extent,
            values,
        })
    }

    pub fn from_fn(
        resolution: usize,
        origin: Vec3,
        extent: Vec3,
        f: impl Fn(&Vec3) -> f64 + Sync,
    ) -> Result<Self> {
        if resolution < 2 {
            return Err(Error::InvalidParam(format!("grid resolution {resolution} below 2")));
        }
        let r = resolution;
        let step = extent / (r - 1) as f64;
        let values: Vec<f64> = (0..r * r * r)
            .into_par_iter()
            .map(|idx| {
                let (i, j, k) = (idx % r, (idx / r) % r, idx / (r * r));
                f(&(origin + Vec3::new(i as f64 * step.x, j as f64 * step.y, k as f64 * step.z)))
            })
            .collect();
        Self::new(resolution, origin, extent, values)
    }

    pub fn spacing(&self) -> Vec3 {
        self.extent / (self.resolution - 1) as f64
    }

    pub fn cell_diagonal(&self) -> f64 {
        self.spacing().norm()
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.resolution + j) * self.resolution + i
    }

    pub fn value(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.index(i, j, k)]
    }

    pub fn point(&self, i: usize, j: usize, k: usize) -> Vec3 {
        let s = self.spacing();
        self.origin + Vec3::new(i as f64 * s.x, j as f64 * s.y, k as f64 * s.z)
    }

    /// Trilinear interpolation, clamped to the grid.
    pub fn trilinear(&self, p: &Vec3) -> f64 {
        let s = self.spacing();
        let last = (self.resolution - 1) as f64;
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let x = ((p[a] - self.origin[a]) / s[a]).clamp(0.0, last);
            let b = (x.floor() as usize).min(self.resolution - 2);
            base[a] = b;
            frac[a] = x - b as f64;
        }
        let mut acc = 0.0;
        for c in 0..8 {
            let (di, dj, dk) = (c & 1, (c >> 1) & 1, (c >> 2) & 1);
            let w = (if di == 1 { frac[0] } else { 1.0 - frac[0] })
                * (if dj == 1 { frac[1] } else { 1.0 - frac[1] })
                * (if dk == 1 { frac[2] } else { 1.0 - frac[2] });
            acc += w * self.value(base[0] + di, base[1] + dj, base[2] + dk);
        }
        acc
    }
}

/// Unsigned distance to the nearest triangle, signed by that triangle's normal.
#[derive(Debug, Clone)]
pub struct MeshSdf {
    mesh: TriangleMesh,
    centroids: KdTree,
    max_radius: f64,
}

impl MeshSdf {
    pub fn new(mesh: &TriangleMesh) -> Result<Self> {
        if mesh.is_empty() {
            return Err(Error::NoSurface);
        }
        let mut centroids = Vec::with_capacity(mesh.faces.len());
        let mut max_radius: f64 = 0.0;
        for f in 0..mesh.faces.len() {
            let t = mesh.triangle(f);
            let c = (t[0] + t[1] + t[2]) / 3.0;
            for v in &t {
                max_radius = max_radius.max((v - c).norm());
            }
            centroids.push(c);
        }
        Ok(Self {
            mesh: mesh.clone(),
            centroids: KdTree::new(&centroids),
            max_radius,
        })
    }

    pub fn eval(&self, q: &Vec3) -> f64 {
        let (_, d0) = self.centroids.nearest(q).expect("non-empty");
        let reach = d0.sqrt() + self.max_radius;
        let mut best = (f64::INFINITY, Vec3::zeros(), 0usize);
        for (f, _) in self.centroids.within_radius(q, reach + 1e-12) {
            let [a, b, c] = self.mesh.triangle(f);
            let p = closest_on_triangle(q, &a, &b, &c);
            let d = (q - p).norm_squared();
            if d < best.0 {
                best = (d, p, f);
            }
        }
        let (d2, p, f) = best;
        let sign = if (q - p).dot(&self.mesh.face_normal(f)) < 0.0 { -1.0 } else { 1.0 };
        sign * d2.sqrt()
    }
}

/// Closest point on triangle `abc` to `p` (Ericson, Real-Time Collision Detection).
pub(crate) fn closest_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Vec3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = 1.0 / (va + vb + vc);
    a + ab * (vb * denom) + ac * (vc * denom)
}
