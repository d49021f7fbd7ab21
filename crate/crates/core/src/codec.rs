//! Kernel codec: encodes a surface point cloud into anchored tokens and decodes
//! any token subset back into a signed distance field and a mesh.

use std::collections::BTreeSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::index::KdTree;
use crate::geometry::{marching_cubes_banded, BoundingBox, SdfGrid, SurfaceSample, TriangleMesh};
use crate::{Error, Result, Vec3};

pub const FEATURE_DIM: usize = 8;
pub type Feature = [f64; FEATURE_DIM];

/// Anchors used for the local-radius feature.
const RADIUS_NEIGHBORS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CodecParams {
    pub n_tok: usize,
    pub n_surf: usize,
    /// Encoder kernel bandwidth in squared-distance units.
    pub tau_enc: f64,
    /// Decoder blend bandwidth in squared-distance units.
    pub tau_dec: f64,
    pub far_field_cutoff: f64,
    pub grid_resolution: usize,
}

impl Default for CodecParams {
    fn default() -> Self {
        Self {
            n_tok: 512,
            n_surf: 20_000,
            tau_enc: 0.02,
            tau_dec: 0.005,
            far_field_cutoff: 0.15,
            grid_resolution: 96,
        }
    }
}

impl CodecParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_tok == 0 || self.n_surf == 0 || self.grid_resolution < 2 {
            return Err(Error::InvalidParam("codec counts must be positive".into()));
        }
        if !(self.tau_enc > 0.0 && self.tau_dec > 0.0 && self.far_field_cutoff > 0.0) {
            return Err(Error::InvalidParam("codec bandwidths must be positive".into()));
        }
        if self.n_tok > self.n_surf {
            return Err(Error::InvalidParam(format!(
                "n_tok {} exceeds n_surf {}",
                self.n_tok, self.n_surf
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Token {
    pub id: u32,
    pub anchor_position: Vec3,
    pub anchor_normal: Vec3,
    /// `[position(3), normal(3), local radius, reserved]`
    pub feature: Feature,
}

impl Token {
    /// Rebuilds the anchor from the pose stored in the feature vector.
    pub fn from_feature(id: u32, feature: Feature) -> Self {
        let n = Vec3::new(feature[3], feature[4], feature[5]);
        let len = n.norm();
        Self {
            id,
            anchor_position: Vec3::new(feature[0], feature[1], feature[2]),
            anchor_normal: if len > 0.0 { n / len } else { Vec3::z() },
            feature,
        }
    }

    pub fn feature_position(&self) -> Vec3 {
        Vec3::new(self.feature[0], self.feature[1], self.feature[2])
    }
}

/// Tokens kept sorted by id.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSet {
    pub tokens: Vec<Token>,
    pub params: CodecParams,
}

impl TokenSet {
    pub fn new(mut tokens: Vec<Token>, params: CodecParams) -> Result<Self> {
        tokens.sort_by_key(|t| t.id);
        if tokens.windows(2).any(|w| w[0].id == w[1].id) {
            return Err(Error::InvalidParam("duplicate token id".into()));
        }
        Ok(Self { tokens, params })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn ids(&self) -> BTreeSet<u32> {
        self.tokens.iter().map(|t| t.id).collect()
    }

    pub fn get(&self, id: u32) -> Option<&Token> {
        self.tokens
            .binary_search_by_key(&id, |t| t.id)
            .ok()
            .map(|i| &self.tokens[i])
    }

    pub fn subset(&self, ids: &BTreeSet<u32>) -> TokenSet {
        TokenSet {
            tokens: self.tokens.iter().filter(|t| ids.contains(&t.id)).copied().collect(),
            params: self.params,
        }
    }

    pub fn positions(&self) -> Vec<Vec3> {
        self.tokens.iter().map(|t| t.anchor_position).collect()
    }

    pub fn features(&self) -> Vec<Feature> {
        self.tokens.iter().map(|t| t.feature).collect()
    }
}

fn round_f32(x: f64) -> f64 {
    x as f32 as f64
}

/// Farthest-point sampling. The start index comes from `seed`; ties go to the
/// lowest index.
pub fn farthest_point_sampling(points: &[Vec3], k: usize, seed: u64) -> Vec<usize> {
    if points.is_empty() || k == 0 {
        return Vec::new();
    }
    let k = k.min(points.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut current = rng.random_range(0..points.len());
    let mut dist = vec![f64::INFINITY; points.len()];
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        out.push(current);
        let c = points[current];
        let mut best = (usize::MAX, f64::NEG_INFINITY);
        for (i, p) in points.iter().enumerate() {
            let d = (p - c).norm_squared();
            if d < dist[i] {
                dist[i] = d;
            }
            if dist[i] > best.1 {
                best = (i, dist[i]);
            }
        }
        current = best.0;
    }
    out
}

pub fn encode(samples: &[SurfaceSample], params: &CodecParams, seed: u64) -> Result<TokenSet> {
    params.validate()?;
    if samples.len() < params.n_tok {
        return Err(Error::TooFewSamples {
            have: samples.len(),
            need: params.n_tok,
        });
    }
    let positions: Vec<Vec3> = samples.iter().map(|s| s.position).collect();
    let picks = farthest_point_sampling(&positions, params.n_tok, seed);
    let sample_tree = KdTree::new(&positions);
    let radius = 3.0 * params.tau_enc.sqrt();
    let normals: Vec<Vec3> = picks
        .par_iter()
        .map(|&i| {
            let p = positions[i];
            let mut acc = Vec3::zeros();
            for (j, d2) in sample_tree.within_radius(&p, radius) {
                acc += samples[j].normal * (-d2 / params.tau_enc).exp();
            }
            let len = acc.norm();
            if len > 1e-12 {
                acc / len
            } else {
                samples[i].normal.normalize()
            }
        })
        .collect();
    let anchors: Vec<Vec3> = picks.iter().map(|&i| positions[i].map(round_f32)).collect();
    let anchor_tree = KdTree::new(&anchors);
    let mut tokens = Vec::with_capacity(picks.len());
    for (id, (p, n)) in anchors.iter().zip(normals.iter()).enumerate() {
        let n = n.map(round_f32);
        let neighbors = anchor_tree.k_nearest(p, RADIUS_NEIGHBORS + 1);
        let others: Vec<f64> = neighbors
            .iter()
            .filter(|&&(j, _)| j != id)
            .take(RADIUS_NEIGHBORS)
            .map(|&(_, d2)| d2.sqrt())
            .collect();
        let local_radius = if others.is_empty() {
            0.0
        } else {
            others.iter().sum::<f64>() / others.len() as f64
        };
        let feature = [p.x, p.y, p.z, n.x, n.y, n.z, round_f32(local_radius), 0.0];
        tokens.push(Token {
            id: id as u32,
            anchor_position: *p,
            anchor_normal: n,
            feature,
        });
    }
    TokenSet::new(tokens, *params)
}

/// Blended local-plane SDF over a fixed token set.
#[derive(Debug, Clone)]
pub struct Decoder {
    points: Vec<Vec3>,
    normals: Vec<Vec3>,
    tree: KdTree,
    tau: f64,
    cutoff: f64,
}

impl Decoder {
    /// Reads each token's pose from its feature vector; tokens whose normal
    /// slot is zero are ignored.
    pub fn new(tokens: &TokenSet) -> Self {
        let mut points = Vec::with_capacity(tokens.len());
        let mut normals = Vec::with_capacity(tokens.len());
        for t in &tokens.tokens {
            let n = Vec3::new(t.feature[3], t.feature[4], t.feature[5]);
            let len = n.norm();
            if len > 0.0 && len.is_finite() {
                points.push(t.feature_position());
                normals.push(n / len);
            }
        }
        Self {
            tree: KdTree::new(&points),
            points,
            normals,
            tau: tokens.params.tau_dec,
            cutoff: tokens.params.far_field_cutoff,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Softmax-blended plane distance over tokens within the cutoff. Beyond the
    /// cutoff the distance to the nearest anchor is returned, signed by which
    /// side of that anchor's plane the query lies on.
    pub fn eval(&self, q: &Vec3) -> Option<f64> {
        let near = self.tree.within_radius(q, self.cutoff);
        if near.is_empty() {
            let (i, d2) = self.tree.nearest(q)?;
            let side = (q - self.points[i]).dot(&self.normals[i]);
            return Some(if side < 0.0 { -d2.sqrt() } else { d2.sqrt() });
        }
        let dmin = near.iter().map(|&(_, d2)| d2).fold(f64::INFINITY, f64::min);
        let (mut wsum, mut acc) = (0.0, 0.0);
        for (i, d2) in near {
            let w = (-(d2 - dmin) / self.tau).exp();
            wsum += w;
            acc += w * (q - self.points[i]).dot(&self.normals[i]);
        }
        Some(acc / wsum)
    }

    /// Samples the field on a cubic lattice. Points outside every token's
    /// cutoff ball get a placeholder of twice the cutoff, which banded
    /// extraction never reads.
    fn grid(&self, resolution: usize, origin: Vec3, side: f64) -> Result<SdfGrid> {
        let r = resolution;
        let h = side / (r - 1) as f64;
        let point = |i: usize, j: usize, k: usize| origin + Vec3::new(i as f64 * h, j as f64 * h, k as f64 * h);
        let cut2 = self.cutoff * self.cutoff;
        let mut dmin = vec![f64::INFINITY; r * r * r];
        let range = |c: f64, o: f64| {
            let lo = (((c - self.cutoff - o) / h).ceil().max(0.0)) as usize;
            let hi = (((c + self.cutoff - o) / h).floor()).min((r - 1) as f64);
            (lo, hi)
        };
        let visit = |f: &mut dyn FnMut(usize, usize, Vec3)| {
            for (t, p) in self.points.iter().enumerate() {
                let (x0, x1) = range(p.x, origin.x);
                let (y0, y1) = range(p.y, origin.y);
                let (z0, z1) = range(p.z, origin.z);
                if x1 < 0.0 || y1 < 0.0 || z1 < 0.0 {
                    continue;
                }
                for k in z0..=z1 as usize {
                    for j in y0..=y1 as usize {
                        for i in x0..=x1 as usize {
                            f(t, (k * r + j) * r + i, point(i, j, k));
                        }
                    }
                }
            }
        };
        visit(&mut |t, idx, q| {
            let d2 = (q - self.points[t]).norm_squared();
            if d2 <= cut2 && d2 < dmin[idx] {
                dmin[idx] = d2;
            }
        });
        let mut wsum = vec![0.0; r * r * r];
        let mut acc = vec![0.0; r * r * r];
        visit(&mut |t, idx, q| {
            let d2 = (q - self.points[t]).norm_squared();
            if d2 <= cut2 {
                let w = (-(d2 - dmin[idx]) / self.tau).exp();
                wsum[idx] += w;
                acc[idx] += w * (q - self.points[t]).dot(&self.normals[t]);
            }
        });
        let values = (0..r * r * r)
            .map(|idx| if wsum[idx] > 0.0 { acc[idx] / wsum[idx] } else { 2.0 * self.cutoff })
            .collect();
        SdfGrid::new(r, origin, Vec3::repeat(side), values)
    }

    /// Zero level set over the token bounding box inflated by the cutoff.
    pub fn mesh(&self, resolution: usize) -> Result<TriangleMesh> {
        if resolution < 2 {
            return Err(Error::InvalidParam(format!("grid resolution {resolution} below 2")));
        }
        let Some(bb) = BoundingBox::around(self.points.iter()) else {
            return Ok(TriangleMesh::empty());
        };
        let bb = bb.inflate(self.cutoff);
        let side = bb.size().max();
        let origin = bb.center() - Vec3::repeat(0.5 * side);
        let grid = self.grid(resolution, origin, side)?;
        marching_cubes_banded(&grid, 0.0, self.cutoff)
    }
}

pub fn decode_sdf(tokens: &TokenSet, query: &Vec3) -> Result<f64> {
    Decoder::new(tokens).eval(query).ok_or(Error::EmptyTokenSet)
}

/// An empty token set decodes to an empty mesh.
pub fn decode_mesh(tokens: &TokenSet, resolution: usize) -> Result<TriangleMesh> {
    Decoder::new(tokens).mesh(resolution)
}

/// Ids of tokens whose anchor lies in the closed box.
pub fn tokens_in_box(tokens: &TokenSet, b: &BoundingBox) -> BTreeSet<u32> {
    tokens
        .tokens
        .iter()
        .filter(|t| b.contains(&t.anchor_position))
        .map(|t| t.id)
        .collect()
}

pub const ARCHIVE_FORMAT: &str = "vse-tokens";
pub const ROW_FLOATS: usize = 6 + FEATURE_DIM;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveHeader {
    pub format: String,
    pub version: u32,
    pub count: usize,
    pub feature_dim: usize,
    pub row_layout: Vec<String>,
    pub dtype: String,
    pub endianness: String,
    pub ids: Vec<u32>,
    pub params: CodecParams,
}

/// Header JSON and little-endian f32 rows `[anchor_position, anchor_normal, feature]`
/// in id order.
pub fn archive_bytes(tokens: &TokenSet) -> Result<(String, Vec<u8>)> {
    let header = ArchiveHeader {
        format: ARCHIVE_FORMAT.into(),
        version: 1,
        count: tokens.len(),
        feature_dim: FEATURE_DIM,
        row_layout: vec![
            "anchor_position:3".into(),
            "anchor_normal:3".into(),
            format!("feature:{FEATURE_DIM}"),
        ],
        dtype: "f32".into(),
        endianness: "little".into(),
        ids: tokens.tokens.iter().map(|t| t.id).collect(),
        params: tokens.params,
    };
    let mut bin = Vec::with_capacity(tokens.len() * ROW_FLOATS * 4);
    for t in &tokens.tokens {
        let row = t
            .anchor_position
            .iter()
            .chain(t.anchor_normal.iter())
            .chain(t.feature.iter());
        for v in row {
            bin.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    Ok((serde_json::to_string_pretty(&header)? + "\n", bin))
}

pub fn archive_from_bytes(header: &str, bin: &[u8]) -> Result<TokenSet> {
    let h: ArchiveHeader = serde_json::from_str(header)?;
    if h.format != ARCHIVE_FORMAT || h.dtype != "f32" || h.endianness != "little" {
        return Err(Error::Parse(format!(
            "unsupported archive {} {} {}",
            h.format, h.dtype, h.endianness
        )));
    }
    if h.feature_dim != FEATURE_DIM || h.ids.len() != h.count {
        return Err(Error::Parse("archive header is inconsistent".into()));
    }
    if bin.len() != h.count * ROW_FLOATS * 4 {
        return Err(Error::Parse(format!(
            "archive body has {} bytes, expected {}",
            bin.len(),
            h.count * ROW_FLOATS * 4
        )));
    }
    let floats: Vec<f64> = bin
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let tokens = h
        .ids
        .iter()
        .zip(floats.chunks_exact(ROW_FLOATS))
        .map(|(&id, row)| Token {
            id,
            anchor_position: Vec3::new(row[0], row[1], row[2]),
            anchor_normal: Vec3::new(row[3], row[4], row[5]),
            feature: std::array::from_fn(|k| row[6 + k]),
        })
        .collect();
    TokenSet::new(tokens, h.params)
}

/// Writes `<stem>.json` and `<stem>.bin`.
pub fn write_archive(dir: &Path, stem: &str, tokens: &TokenSet) -> Result<()> {
    let (header, bin) = archive_bytes(tokens)?;
    std::fs::write(dir.join(format!("{stem}.json")), header)?;
    std::fs::write(dir.join(format!("{stem}.bin")), bin)?;
    Ok(())
}

/// Reads an archive given the path of its JSON header; the body sits next to
/// it with a `.bin` extension.
pub fn read_archive(header_path: &Path) -> Result<TokenSet> {
    let header = std::fs::read_to_string(header_path)?;
    let bin = std::fs::read(header_path.with_extension("bin"))?;
    archive_from_bytes(&header, &bin)
}
