use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{SurfaceSample, TriangleMesh};
use crate::{Error, Result};

/// Area-weighted uniform samples with flat face normals.
pub fn sample_surface(mesh: &TriangleMesh, n: usize, seed: u64) -> Result<Vec<SurfaceSample>> {
    if mesh.is_empty() {
        return Err(Error::NoSurface);
    }
    if n == 0 {
        return Err(Error::InvalidParam("sample count must be at least 1".into()));
    }
    let mut cdf = Vec::with_capacity(mesh.faces.len());
    let mut total = 0.0;
    for f in 0..mesh.faces.len() {
        total += mesh.face_area(f);
        cdf.push(total);
    }
    let normals: Vec<_> = (0..mesh.faces.len()).map(|f| mesh.face_normal(f)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let x = rng.random::<f64>() * total;
        let f = cdf.partition_point(|&c| c <= x).min(cdf.len() - 1);
        let (r1, r2): (f64, f64) = (rng.random(), rng.random());
        let s = r1.sqrt();
        let [a, b, c] = mesh.triangle(f);
        let position = a * (1.0 - s) + b * (s * (1.0 - r2)) + c * (s * r2);
        out.push(SurfaceSample {
            position,
            normal: normals[f],
        });
    }
    Ok(out)
}
