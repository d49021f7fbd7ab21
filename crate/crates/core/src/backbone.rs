//! The denoiser interface consumed by editing, and a deterministic synthetic
//! implementation whose velocity is the exact rectified-flow field toward a
//! known target token set.

use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::codec::{Feature, Token, TokenSet};
use crate::geometry::index::KdTree;
use crate::geometry::{ImageGrid, ViewSpec};
use crate::{Error, Result, Vec3};

/// What the denoiser is conditioned on.
#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub image: ImageGrid,
    pub view: ViewSpec,
    /// Flow endpoint for the synthetic backbone.
    pub target_tokens: Option<TokenSet>,
}

impl Condition {
    pub fn new(image: ImageGrid, view: ViewSpec, target_tokens: Option<TokenSet>) -> Result<Self> {
        let c = Self {
            image,
            view,
            target_tokens,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.view.validate()?;
        let n = self.view.image_size;
        if self.image.height != n || self.image.width != n {
            return Err(Error::ShapeMismatch(format!(
                "condition image {}x{} does not match view size {n}",
                self.image.height, self.image.width
            )));
        }
        Ok(())
    }
}

/// A row-stochastic attention matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum AttnMatrix {
    Dense {
        rows: usize,
        cols: usize,
        data: Vec<f64>,
    },
    /// Every entry is `1/cols`.
    Uniform { rows: usize, cols: usize },
    /// `A[i, r*width + c] = col_factor[i][c] * row_factor[i][r]`, each factor
    /// already normalized.
    Separable {
        rows: usize,
        height: usize,
        width: usize,
        col_factor: Vec<f64>,
        row_factor: Vec<f64>,
    },
}

impl AttnMatrix {
    pub fn dense(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(AttnMatrix::Dense { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        match self {
            AttnMatrix::Dense { rows, .. } | AttnMatrix::Uniform { rows, .. } | AttnMatrix::Separable { rows, .. } => {
                *rows
            }
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            AttnMatrix::Dense { cols, .. } | AttnMatrix::Uniform { cols, .. } => *cols,
            AttnMatrix::Separable { height, width, .. } => height * width,
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match self {
            AttnMatrix::Dense { cols, data, .. } => data[i * cols + j],
            AttnMatrix::Uniform { cols, .. } => 1.0 / *cols as f64,
            AttnMatrix::Separable {
                height,
                width,
                col_factor,
                row_factor,
                ..
            } => col_factor[i * width + j % width] * row_factor[i * height + j / width],
        }
    }

    /// Writes row `i` into `out` (length `cols`).
    pub fn row_into(&self, i: usize, out: &mut [f64]) {
        match self {
            AttnMatrix::Dense { cols, data, .. } => out.copy_from_slice(&data[i * cols..(i + 1) * cols]),
            AttnMatrix::Uniform { cols, .. } => out.fill(1.0 / *cols as f64),
            AttnMatrix::Separable {
                height,
                width,
                col_factor,
                row_factor,
                ..
            } => {
                let cf = &col_factor[i * width..(i + 1) * width];
                let rf = &row_factor[i * height..(i + 1) * height];
                for (r, &ry) in rf.iter().enumerate() {
                    for (c, &cx) in cf.iter().enumerate() {
                        out[r * width + c] = cx * ry;
                    }
                }
            }
        }
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.cols()];
        self.row_into(i, &mut out);
        out
    }

    /// `Σ_j A[i,j]·w[j]`.
    pub fn row_dot(&self, i: usize, w: &[f64]) -> f64 {
        match self {
            AttnMatrix::Dense { cols, data, .. } => data[i * cols..(i + 1) * cols]
                .iter()
                .zip(w)
                .map(|(a, b)| a * b)
                .sum(),
            AttnMatrix::Uniform { cols, .. } => w.iter().sum::<f64>() / *cols as f64,
            AttnMatrix::Separable {
                height,
                width,
                col_factor,
                row_factor,
                ..
            } => {
                let cf = &col_factor[i * width..(i + 1) * width];
                let rf = &row_factor[i * height..(i + 1) * height];
                rf.iter()
                    .enumerate()
                    .map(|(r, ry)| ry * cf.iter().zip(&w[r * width..(r + 1) * width]).map(|(a, b)| a * b).sum::<f64>())
                    .sum()
            }
        }
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        match self {
            AttnMatrix::Separable {
                height,
                width,
                col_factor,
                row_factor,
                ..
            } => {
                col_factor[i * width..(i + 1) * width].iter().sum::<f64>()
                    * row_factor[i * height..(i + 1) * height].iter().sum::<f64>()
            }
            _ => self.row(i).iter().sum(),
        }
    }
}

/// Velocity plus per-layer attention. Row `i` of every matrix belongs to the
/// `i`-th token of the input set (id order).
#[derive(Debug, Clone)]
pub struct BackboneOutput {
    pub velocity: Vec<Feature>,
    pub cross_attention: Vec<Arc<AttnMatrix>>,
    pub self_attention: Vec<Arc<AttnMatrix>>,
}

/// The DiT contract: velocity for noisy tokens at time `t` (noise at 1, data
/// at 0) plus layered attention maps.
pub trait Backbone: Sync {
    fn n_layers(&self) -> usize;
    fn forward(&self, tokens: &TokenSet, cond: &Condition, t: f64) -> Result<BackboneOutput>;
    fn velocity(&self, tokens: &TokenSet, cond: &Condition, t: f64) -> Result<Vec<Feature>>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackboneParams {
    pub n_layers: usize,
    /// Per-layer bandwidths in normalized image units; `inf` is a uniform layer.
    #[serde(serialize_with = "ser_floats", deserialize_with = "de_floats")]
    pub cross_bandwidths: Vec<f64>,
    pub self_bandwidth: f64,
    pub visibility_sharpness: f64,
    /// Classifier-free guidance scale; accepted and ignored here.
    pub cfg_scale: f64,
    pub fixed_matching: bool,
}

impl Default for BackboneParams {
    fn default() -> Self {
        Self {
            n_layers: 4,
            cross_bandwidths: vec![0.002, 0.008, 0.05, f64::INFINITY],
            self_bandwidth: 0.01,
            visibility_sharpness: 4.0,
            cfg_scale: 10.0,
            fixed_matching: false,
        }
    }
}

impl BackboneParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 || self.cross_bandwidths.len() != self.n_layers {
            return Err(Error::InvalidParam(format!(
                "{} cross bandwidths for {} layers",
                self.cross_bandwidths.len(),
                self.n_layers
            )));
        }
        if self.cross_bandwidths.iter().any(|b| !(*b > 0.0)) || !(self.self_bandwidth > 0.0) {
            return Err(Error::InvalidParam("bandwidths must be positive or inf".into()));
        }
        if !(self.visibility_sharpness >= 0.0) {
            return Err(Error::InvalidParam("visibility_sharpness must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum FloatOrInf {
    Num(f64),
    Text(String),
}

fn ser_floats<S: Serializer>(v: &[f64], s: S) -> std::result::Result<S::Ok, S::Error> {
    let items: Vec<FloatOrInf> = v
        .iter()
        .map(|&x| {
            if x.is_infinite() && x > 0.0 {
                FloatOrInf::Text("inf".into())
            } else {
                FloatOrInf::Num(x)
            }
        })
        .collect();
    items.serialize(s)
}

fn de_floats<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<f64>, D::Error> {
    let items = Vec::<FloatOrInf>::deserialize(d)?;
    items
        .into_iter()
        .map(|x| match x {
            FloatOrInf::Num(v) => Ok(v),
            FloatOrInf::Text(t) if t == "inf" || t == "infinity" => Ok(f64::INFINITY),
            FloatOrInf::Text(t) => Err(serde::de::Error::custom(format!("bad bandwidth {t}"))),
        })
        .collect()
}

/// Deterministic stand-in for a pretrained DiT.
///
/// Each token is matched to a target token by anchor distance (or by id when
/// `fixed_matching` is set and the id exists in the target). The velocity is
/// `(v − v*)/t`; attention is computed at the matched clean estimate.
#[derive(Debug, Clone, Default)]
pub struct SyntheticBackbone {
    pub params: BackboneParams,
}

impl SyntheticBackbone {
    pub fn new(params: BackboneParams) -> Result<Self> {
        params.validate()?;
        Ok(Self { params })
    }

    /// Index into the target token list for every input token.
    pub fn matching(&self, tokens: &TokenSet, target: &TokenSet) -> Result<Vec<usize>> {
        if target.is_empty() {
            return Err(Error::MissingTarget);
        }
        let tree = KdTree::new(&target.positions());
        Ok(tokens
            .tokens
            .iter()
            .map(|t| {
                if self.params.fixed_matching {
                    if let Ok(k) = target.tokens.binary_search_by_key(&t.id, |x| x.id) {
                        return k;
                    }
                }
                tree.nearest(&t.anchor_position).expect("non-empty target").0
            })
            .collect())
    }

    fn target<'a>(&self, cond: &'a Condition) -> Result<&'a TokenSet> {
        cond.target_tokens.as_ref().ok_or(Error::MissingTarget)
    }

    fn check_t(t: f64) -> Result<()> {
        if !(t > 0.0) {
            return Err(Error::VelocityAtZero);
        }
        if t > 1.0 {
            return Err(Error::InvalidParam(format!("t = {t} above 1")));
        }
        Ok(())
    }

    fn velocity_from(tokens: &TokenSet, target: &TokenSet, m: &[usize], t: f64) -> Vec<Feature> {
        tokens
            .tokens
            .iter()
            .zip(m)
            .map(|(tok, &k)| {
                let goal = &target.tokens[k].feature;
                std::array::from_fn(|c| (tok.feature[c] - goal[c]) / t)
            })
            .collect()
    }
}

impl Backbone for SyntheticBackbone {
    fn n_layers(&self) -> usize {
        self.params.n_layers
    }

    fn velocity(&self, tokens: &TokenSet, cond: &Condition, t: f64) -> Result<Vec<Feature>> {
        Self::check_t(t)?;
        let target = self.target(cond)?;
        let m = self.matching(tokens, target)?;
        Ok(Self::velocity_from(tokens, target, &m, t))
    }

    fn forward(&self, tokens: &TokenSet, cond: &Condition, t: f64) -> Result<BackboneOutput> {
        Self::check_t(t)?;
        cond.validate()?;
        let target = self.target(cond)?;
        let m = self.matching(tokens, target)?;
        let velocity = Self::velocity_from(tokens, target, &m, t);
        let estimate: Vec<Token> = m.iter().map(|&k| target.tokens[k]).collect();
        let positions: Vec<Vec3> = estimate.iter().map(|t| t.anchor_position).collect();
        let normals: Vec<Vec3> = estimate.iter().map(|t| t.anchor_normal).collect();
        Ok(BackboneOutput {
            velocity,
            cross_attention: cross_attention_maps(&positions, &normals, &cond.view, &self.params),
            self_attention: self_attention_maps(&positions, &self.params),
        })
    }
}

/// Projected-anchor kernel over pixel centers, one matrix per layer.
///
/// The visibility term enters as a per-token sharpening of the kernel:
/// back-facing tokens keep the layer bandwidth, a token facing the camera
/// head-on concentrates `1 + sharpness` times more tightly.
pub fn cross_attention_maps(
    positions: &[Vec3],
    normals: &[Vec3],
    view: &ViewSpec,
    params: &BackboneParams,
) -> Vec<Arc<AttnMatrix>> {
    let n = positions.len();
    let size = view.image_size;
    let hw = size * size;
    let dir = view.view_dir();
    let proj: Vec<(f64, f64)> = positions.iter().map(|p| view.project(p)).collect();
    let sharp = params.visibility_sharpness;
    let scale: Vec<f64> = normals
        .iter()
        .map(|nrm| 1.0 + sharp * nrm.dot(&dir).max(0.0))
        .collect();
    let centers: Vec<f64> = (0..size).map(|k| (k as f64 + 0.5) / size as f64).collect();
    params
        .cross_bandwidths
        .iter()
        .map(|&b| {
            if b.is_infinite() {
                return Arc::new(AttnMatrix::Uniform { rows: n, cols: hw });
            }
            let mut col_factor = vec![0.0; n * size];
            let mut row_factor = vec![0.0; n * size];
            for i in 0..n {
                let k = scale[i] / b;
                softmax_1d(&centers, proj[i].0, k, &mut col_factor[i * size..(i + 1) * size]);
                softmax_1d(&centers, proj[i].1, k, &mut row_factor[i * size..(i + 1) * size]);
            }
            Arc::new(AttnMatrix::Separable {
                rows: n,
                height: size,
                width: size,
                col_factor,
                row_factor,
            })
        })
        .collect()
}

fn softmax_1d(centers: &[f64], x: f64, k: f64, out: &mut [f64]) {
    let logits: Vec<f64> = centers.iter().map(|c| -(c - x) * (c - x) * k).collect();
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, l) in out.iter_mut().zip(&logits) {
        *o = (l - m).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Anchor-distance kernel among tokens, shared by every layer.
pub fn self_attention_maps(positions: &[Vec3], params: &BackboneParams) -> Vec<Arc<AttnMatrix>> {
    let n = positions.len();
    let b = params.self_bandwidth;
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        let row = &mut data[i * n..(i + 1) * n];
        let mut m = f64::NEG_INFINITY;
        for (j, r) in row.iter_mut().enumerate() {
            *r = -(positions[i] - positions[j]).norm_squared() / b;
            m = m.max(*r);
        }
        let mut sum = 0.0;
        for r in row.iter_mut() {
            *r = (*r - m).exp();
            sum += *r;
        }
        for r in row.iter_mut() {
            *r /= sum;
        }
    }
    let shared = Arc::new(AttnMatrix::Dense { rows: n, cols: n, data });
    (0..params.n_layers).map(|_| Arc::clone(&shared)).collect()
}
