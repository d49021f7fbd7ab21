use std::collections::HashMap;

use super::BoundingBox;
use crate::{Error, Result, Vec3};

/// Faces with area at or below this are dropped on construction.
pub const DEGENERATE_AREA: f64 = 1e-12;

/// Indexed triangle mesh with optional per-vertex RGB colors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
    pub vertex_colors: Option<Vec<[f64; 3]>>,
    /// Every undirected edge is shared by exactly two faces.
    pub watertight: bool,
}

impl TriangleMesh {
    /// Validates indices, drops degenerate faces and computes the watertight flag.
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[u32; 3]>) -> Result<Self> {
        Self::with_colors(vertices, faces, None)
    }

    pub fn with_colors(
        vertices: Vec<Vec3>,
        faces: Vec<[u32; 3]>,
        vertex_colors: Option<Vec<[f64; 3]>>,
    ) -> Result<Self> {
        let n = vertices.len();
        if let Some(c) = &vertex_colors {
            if c.len() != n {
                return Err(Error::ShapeMismatch(format!(
                    "{} colors for {n} vertices",
                    c.len()
                )));
            }
        }
        if let Some(f) = faces.iter().find(|f| f.iter().any(|&i| i as usize >= n)) {
            return Err(Error::ShapeMismatch(format!(
                "face {f:?} references a vertex beyond {n}"
            )));
        }
        let faces = faces
            .into_iter()
            .filter(|f| {
                f[0] != f[1]
                    && f[1] != f[2]
                    && f[0] != f[2]
                    && tri_area(&vertices[f[0] as usize], &vertices[f[1] as usize], &vertices[f[2] as usize])
                        > DEGENERATE_AREA
            })
            .collect();
        let mut mesh = Self {
            vertices,
            faces,
            vertex_colors,
            watertight: false,
        };
        mesh.watertight = mesh.compute_watertight();
        Ok(mesh)
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn triangle(&self, f: usize) -> [Vec3; 3] {
        let [a, b, c] = self.faces[f];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.triangle(f);
        tri_area(&a, &b, &c)
    }

    pub fn face_normal(&self, f: usize) -> Vec3 {
        let [a, b, c] = self.triangle(f);
        let n = (b - a).cross(&(c - a));
        let len = n.norm();
        if len > 0.0 {
            n / len
        } else {
            Vec3::zeros()
        }
    }

    pub fn area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Area-weighted average of incident face normals.
    pub fn vertex_normals(&self) -> Vec<Vec3> {
        let mut acc = vec![Vec3::zeros(); self.vertices.len()];
        for (f, face) in self.faces.iter().enumerate() {
            let [a, b, c] = self.triangle(f);
            let n = (b - a).cross(&(c - a));
            for &i in face {
                acc[i as usize] += n;
            }
        }
        acc.into_iter()
            .map(|n| {
                let len = n.norm();
                if len > 0.0 {
                    n / len
                } else {
                    n
                }
            })
            .collect()
    }

    pub fn bounding_box(&self) -> Option<BoundingBox> {
        BoundingBox::around(self.vertices.iter())
    }

    pub fn edge_count(&self) -> usize {
        self.edge_valence().len()
    }

    fn edge_valence(&self) -> HashMap<(u32, u32), u32> {
        let mut edges = HashMap::with_capacity(self.faces.len() * 3 / 2);
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                *edges.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        edges
    }

    fn compute_watertight(&self) -> bool {
        !self.faces.is_empty() && self.edge_valence().values().all(|&c| c == 2)
    }

    /// `V − E + F` counting only vertices referenced by some face.
    pub fn euler_characteristic(&self) -> i64 {
        let mut used = vec![false; self.vertices.len()];
        for f in &self.faces {
            for &i in f {
                used[i as usize] = true;
            }
        }
        let v = used.iter().filter(|&&u| u).count() as i64;
        v - self.edge_count() as i64 + self.faces.len() as i64
    }

    /// Concatenates two meshes. Colors survive only if both sides carry them.
    pub fn merged(&self, other: &TriangleMesh) -> TriangleMesh {
        let off = self.vertices.len() as u32;
        let mut vertices = self.vertices.clone();
        vertices.extend_from_slice(&other.vertices);
        let mut faces = self.faces.clone();
        faces.extend(other.faces.iter().map(|f| [f[0] + off, f[1] + off, f[2] + off]));
        let vertex_colors = match (&self.vertex_colors, &other.vertex_colors) {
            (Some(a), Some(b)) => Some(a.iter().chain(b.iter()).copied().collect()),
            _ => None,
        };
        let mut mesh = TriangleMesh {
            vertices,
            faces,
            vertex_colors,
            watertight: false,
        };
        mesh.watertight = mesh.compute_watertight();
        mesh
    }

    pub fn transformed(&self, scale: f64, offset: Vec3) -> TriangleMesh {
        TriangleMesh {
            vertices: self.vertices.iter().map(|v| v * scale + offset).collect(),
            ..self.clone()
        }
    }

    /// Rescales into `[-1,1]³` leaving `margin` (fraction of the half-width) free.
    /// Returns the mesh with the applied `(scale, offset)`.
    pub fn normalized(&self, margin: f64) -> (TriangleMesh, f64, Vec3) {
        let Some(bb) = self.bounding_box() else {
            return (self.clone(), 1.0, Vec3::zeros());
        };
        let half = bb.size().max() * 0.5;
        let scale = if half > 0.0 { (1.0 - margin) / half } else { 1.0 };
        let offset = -bb.center() * scale;
        (self.transformed(scale, offset), scale, offset)
    }

    /// Subdivided icosahedron projected onto a sphere.
    pub fn icosphere(center: Vec3, radius: f64, subdivisions: usize) -> TriangleMesh {
        let t = (1.0 + 5f64.sqrt()) / 2.0;
        let mut verts: Vec<Vec3> = [
            (-1.0, t, 0.0),
            (1.0, t, 0.0),
            (-1.0, -t, 0.0),
            (1.0, -t, 0.0),
            (0.0, -1.0, t),
            (0.0, 1.0, t),
            (0.0, -1.0, -t),
            (0.0, 1.0, -t),
            (t, 0.0, -1.0),
            (t, 0.0, 1.0),
            (-t, 0.0, -1.0),
            (-t, 0.0, 1.0),
        ]
        .into_iter()
        .map(|(x, y, z)| Vec3::new(x, y, z).normalize())
        .collect();
        let mut faces: Vec<[u32; 3]> = vec![
            [0, 11, 5],
            [0, 5, 1],
            [0, 1, 7],
            [0, 7, 10],
            [0, 10, 11],
            [1, 5, 9],
            [5, 11, 4],
            [11, 10, 2],
            [10, 7, 6],
            [7, 1, 8],
            [3, 9, 4],
            [3, 4, 2],
            [3, 2, 6],
            [3, 6, 8],
            [3, 8, 9],
            [4, 9, 5],
            [2, 4, 11],
            [6, 2, 10],
            [8, 6, 7],
            [9, 8, 1],
        ];
        for _ in 0..subdivisions {
            let mut midpoint: HashMap<(u32, u32), u32> = HashMap::new();
            let mut mid = |a: u32, b: u32, verts: &mut Vec<Vec3>| -> u32 {
                *midpoint.entry((a.min(b), a.max(b))).or_insert_with(|| {
                    verts.push(((verts[a as usize] + verts[b as usize]) * 0.5).normalize());
                    (verts.len() - 1) as u32
                })
            };
            let mut next = Vec::with_capacity(faces.len() * 4);
            for [a, b, c] in faces {
                let ab = mid(a, b, &mut verts);
                let bc = mid(b, c, &mut verts);
                let ca = mid(c, a, &mut verts);
                next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
            }
            faces = next;
        }
        let vertices = verts.into_iter().map(|v| center + v * radius).collect();
        TriangleMesh::new(vertices, faces).expect("icosphere indices are valid")
    }

    /// Closed box surface with outward-facing triangles.
    pub fn cuboid(bb: &BoundingBox) -> TriangleMesh {
        let vertices = bb.corners().to_vec();
        // corner index bits: x=1, y=2, z=4
        let faces = vec![
            [0, 2, 1],
            [1, 2, 3],
            [4, 5, 6],
            [5, 7, 6],
            [0, 1, 4],
            [1, 5, 4],
            [2, 6, 3],
            [3, 6, 7],
            [0, 4, 2],
            [2, 4, 6],
            [1, 3, 5],
            [3, 7, 5],
        ];
        TriangleMesh::new(vertices, faces).expect("cuboid indices are valid")
    }

    /// Axis-aligned square in the plane `z = z0` facing +z.
    pub fn quad(center: Vec3, half: f64) -> TriangleMesh {
        let v = |dx: f64, dy: f64| center + Vec3::new(dx * half, dy * half, 0.0);
        TriangleMesh::new(
            vec![v(-1.0, -1.0), v(1.0, -1.0), v(1.0, 1.0), v(-1.0, 1.0)],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .expect("quad indices are valid")
    }
}

pub(crate) fn tri_area(a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    0.5 * (b - a).cross(&(c - a)).norm()
}
