use std::collections::HashMap;

use super::mc_table::TRI_TABLE;
use super::{SdfGrid, TriangleMesh};
use crate::{Result, Vec3};

const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

const EDGES: [[usize; 2]; 12] = [
    [0, 1],
    [1, 2],
    [2, 3],
    [3, 0],
    [4, 5],
    [5, 6],
    [6, 7],
    [7, 4],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

// Keeps interpolated vertices off the lattice corners so no sliver faces appear.
const T_CLAMP: f64 = 1e-3;

/// Isosurface at `iso`, oriented with normals toward larger values.
pub fn marching_cubes(grid: &SdfGrid, iso: f64) -> Result<TriangleMesh> {
    extract(grid, iso, f64::INFINITY)
}

/// Like [`marching_cubes`] but skips every cell with a corner whose value lies
/// farther than `band` from `iso`.
pub fn marching_cubes_banded(grid: &SdfGrid, iso: f64, band: f64) -> Result<TriangleMesh> {
    extract(grid, iso, band)
}

fn extract(grid: &SdfGrid, iso: f64, band: f64) -> Result<TriangleMesh> {
    let r = grid.resolution;
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let mut edge_vertex: HashMap<(usize, usize), u32> = HashMap::new();
    for k in 0..r - 1 {
        for j in 0..r - 1 {
            for i in 0..r - 1 {
                let vals: [f64; 8] =
                    std::array::from_fn(|c| grid.value(i + CORNERS[c][0], j + CORNERS[c][1], k + CORNERS[c][2]));
                let mut case = 0usize;
                for (c, v) in vals.iter().enumerate() {
                    if *v < iso {
                        case |= 1 << c;
                    }
                }
                if case == 0 || case == 255 || vals.iter().any(|v| (v - iso).abs() > band) {
                    continue;
                }
                let row = &TRI_TABLE[case];
                let mut vid = |e: usize, vertices: &mut Vec<Vec3>| -> u32 {
                    let [c0, c1] = EDGES[e];
                    let (p0, p1) = (CORNERS[c0], CORNERS[c1]);
                    let axis = (0..3).find(|&a| p0[a] != p1[a]).expect("edge spans one axis");
                    let (lo, hi) = if p0[axis] < p1[axis] { (c0, c1) } else { (c1, c0) };
                    let l = CORNERS[lo];
                    let key = (grid.index(i + l[0], j + l[1], k + l[2]), axis);
                    *edge_vertex.entry(key).or_insert_with(|| {
                        let (va, vb) = (vals[lo], vals[hi]);
                        let t = ((iso - va) / (vb - va)).clamp(T_CLAMP, 1.0 - T_CLAMP);
                        let h = CORNERS[hi];
                        let a = grid.point(i + l[0], j + l[1], k + l[2]);
                        let b = grid.point(i + h[0], j + h[1], k + h[2]);
                        vertices.push(a + (b - a) * t);
                        (vertices.len() - 1) as u32
                    })
                };
                for tri in row.chunks(3) {
                    if tri[0] < 0 {
                        break;
                    }
                    let a = vid(tri[0] as usize, &mut vertices);
                    let b = vid(tri[1] as usize, &mut vertices);
                    let c = vid(tri[2] as usize, &mut vertices);
                    // the table winds toward the inside corners
                    faces.push([a, c, b]);
                }
            }
        }
    }
    TriangleMesh::new(vertices, faces)
}
