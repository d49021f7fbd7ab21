use std::collections::HashMap;

use super::{BoundingBox, TriangleMesh};
use crate::Vec3;

#[derive(Debug, Clone, Copy)]
struct PolyVertex {
    p: Vec3,
    orig: Option<u32>,
    color: Option<[f64; 3]>,
}

/// One clipping plane: keep `p[axis] >= value` when `lower`, else `p[axis] <= value`.
#[derive(Debug, Clone, Copy)]
struct Plane {
    axis: usize,
    value: f64,
    lower: bool,
}

impl Plane {
    fn keeps(&self, p: &Vec3) -> bool {
        if self.lower {
            p[self.axis] >= self.value
        } else {
            p[self.axis] <= self.value
        }
    }
}

fn box_planes(b: &BoundingBox) -> [Plane; 6] {
    let mut out = [Plane { axis: 0, value: 0.0, lower: true }; 6];
    for axis in 0..3 {
        out[2 * axis] = Plane { axis, value: b.min_corner[axis], lower: true };
        out[2 * axis + 1] = Plane { axis, value: b.max_corner[axis], lower: false };
    }
    out
}

fn intersect(a: &PolyVertex, b: &PolyVertex, plane: &Plane) -> PolyVertex {
    // canonical endpoint order so both triangles sharing an edge compute the same point
    let (a, b) = if lex_less(&a.p, &b.p) { (a, b) } else { (b, a) };
    let t = (plane.value - a.p[plane.axis]) / (b.p[plane.axis] - a.p[plane.axis]);
    let mut p = a.p + (b.p - a.p) * t;
    p[plane.axis] = plane.value;
    let color = match (a.color, b.color) {
        (Some(ca), Some(cb)) => Some(std::array::from_fn(|k| ca[k] + (cb[k] - ca[k]) * t)),
        _ => None,
    };
    PolyVertex { p, orig: None, color }
}

fn lex_less(a: &Vec3, b: &Vec3) -> bool {
    (a.x, a.y, a.z) < (b.x, b.y, b.z)
}

/// Splits a convex polygon into the part kept by `plane` and the rest.
fn split(poly: &[PolyVertex], plane: &Plane) -> (Vec<PolyVertex>, Vec<PolyVertex>) {
    let mut keep = Vec::with_capacity(poly.len() + 1);
    let mut rest = Vec::with_capacity(poly.len() + 1);
    for i in 0..poly.len() {
        let cur = &poly[i];
        let next = &poly[(i + 1) % poly.len()];
        let (ci, ni) = (plane.keeps(&cur.p), plane.keeps(&next.p));
        if ci {
            keep.push(*cur);
        } else {
            rest.push(*cur);
        }
        if ci != ni {
            let x = intersect(cur, next, plane);
            keep.push(x);
            rest.push(x);
        }
    }
    (keep, rest)
}

struct Builder<'a> {
    src: &'a TriangleMesh,
    clamp: Option<(&'a BoundingBox, bool)>,
    orig_used: Vec<bool>,
    pieces: Vec<Vec<PolyVertex>>,
}

impl<'a> Builder<'a> {
    fn finish(self) -> TriangleMesh {
        let src = self.src;
        let mut remap = vec![u32::MAX; src.vertices.len()];
        let mut vertices = Vec::new();
        let mut colors = src.vertex_colors.as_ref().map(|_| Vec::new());
        for (i, used) in self.orig_used.iter().enumerate() {
            if *used {
                remap[i] = vertices.len() as u32;
                vertices.push(src.vertices[i]);
                if let (Some(out), Some(c)) = (colors.as_mut(), src.vertex_colors.as_ref()) {
                    out.push(c[i]);
                }
            }
        }
        let mut welded: HashMap<[u64; 3], u32> = HashMap::new();
        let mut faces = Vec::new();
        for poly in &self.pieces {
            let ids: Vec<u32> = poly
                .iter()
                .map(|v| match v.orig {
                    Some(o) => remap[o as usize],
                    None => {
                        let mut p = v.p;
                        if let Some((b, true)) = self.clamp {
                            p = p.sup(&b.min()).inf(&b.max());
                        }
                        let key = p.map(|x| if x == 0.0 { 0u64 } else { x.to_bits() });
                        *welded.entry([key.x, key.y, key.z]).or_insert_with(|| {
                            vertices.push(p);
                            if let Some(out) = colors.as_mut() {
                                out.push(v.color.unwrap_or([0.0; 3]));
                            }
                            (vertices.len() - 1) as u32
                        })
                    }
                })
                .collect();
            for k in 1..ids.len().saturating_sub(1) {
                faces.push([ids[0], ids[k], ids[k + 1]]);
            }
        }
        TriangleMesh::with_colors(vertices, faces, colors).expect("crop produces valid indices")
    }

    fn poly(&self, f: usize) -> Vec<PolyVertex> {
        self.src.faces[f]
            .iter()
            .map(|&i| PolyVertex {
                p: self.src.vertices[i as usize],
                orig: Some(i),
                color: self.src.vertex_colors.as_ref().map(|c| c[i as usize]),
            })
            .collect()
    }

    fn add(&mut self, poly: Vec<PolyVertex>) {
        if poly.len() < 3 {
            return;
        }
        for v in &poly {
            if let Some(o) = v.orig {
                self.orig_used[o as usize] = true;
            }
        }
        self.pieces.push(poly);
    }
}

/// The part of the surface inside the closed box, by clipping every triangle
/// against the six box planes.
pub fn crop_mesh(mesh: &TriangleMesh, b: &BoundingBox) -> TriangleMesh {
    let planes = box_planes(b);
    let mut builder = Builder {
        src: mesh,
        clamp: Some((b, true)),
        orig_used: vec![false; mesh.vertices.len()],
        pieces: Vec::new(),
    };
    for f in 0..mesh.faces.len() {
        let mut poly = builder.poly(f);
        for plane in &planes {
            if poly.len() < 3 {
                break;
            }
            poly = split(&poly, plane).0;
        }
        builder.add(poly);
    }
    builder.finish()
}

/// The part of the surface outside the open box: the complement of [`crop_mesh`].
pub fn crop_mesh_outside(mesh: &TriangleMesh, b: &BoundingBox) -> TriangleMesh {
    let planes = box_planes(b);
    let mut builder = Builder {
        src: mesh,
        clamp: None,
        orig_used: vec![false; mesh.vertices.len()],
        pieces: Vec::new(),
    };
    for f in 0..mesh.faces.len() {
        let mut poly = builder.poly(f);
        for plane in &planes {
            if poly.len() < 3 {
                break;
            }
            let (keep, rest) = split(&poly, plane);
            builder.add(rest);
            poly = keep;
        }
    }
    builder.finish()
}
