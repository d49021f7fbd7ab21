//! Token localization from attention statistics: mask-guided seeding with
//! KL-based layer filtering, self-attention gating, adaptive thresholds.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::backbone::{AttnMatrix, BackboneOutput};
use crate::codec::TokenSet;
use crate::geometry::ImageGrid;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectParams {
    pub alpha_i: f64,
    pub alpha_a: f64,
    pub top_k_layers: usize,
    pub top_fraction: f64,
    pub kl_epsilon: f64,
}

impl Default for SelectParams {
    fn default() -> Self {
        Self {
            alpha_i: 0.7,
            alpha_a: 0.5,
            top_k_layers: 2,
            top_fraction: 0.10,
            kl_epsilon: 1e-12,
        }
    }
}

impl SelectParams {
    pub fn validate(&self) -> Result<()> {
        for (name, a) in [("alpha_i", self.alpha_i), ("alpha_a", self.alpha_a)] {
            if !(a > 0.0 && a <= 1.0) {
                return Err(Error::InvalidParam(format!("{name} must lie in (0,1]")));
            }
        }
        if !(self.top_fraction > 0.0 && self.top_fraction <= 1.0) {
            return Err(Error::InvalidParam("top_fraction must lie in (0,1]".into()));
        }
        if self.top_k_layers == 0 || !(self.kl_epsilon > 0.0) {
            return Err(Error::InvalidParam("top_k_layers and kl_epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// Attention maps gathered over forward passes. Entry `s` holds the maps of
/// one pass together with the token ids owning each row.
#[derive(Debug, Clone, Default)]
pub struct AttentionRecord {
    pub timesteps: Vec<f64>,
    pub ids: Vec<Vec<u32>>,
    pub cross: Vec<Vec<Arc<AttnMatrix>>>,
    pub self_attn: Vec<Vec<Arc<AttnMatrix>>>,
}

impl AttentionRecord {
    pub fn is_empty(&self) -> bool {
        self.timesteps.is_empty()
    }

    pub fn len(&self) -> usize {
        self.timesteps.len()
    }

    pub fn n_layers(&self) -> usize {
        self.cross.first().map_or(0, Vec::len)
    }

    pub fn push(&mut self, t: f64, tokens: &TokenSet, out: &BackboneOutput) {
        self.push_maps(
            t,
            tokens.tokens.iter().map(|t| t.id).collect(),
            out.cross_attention.clone(),
            out.self_attention.clone(),
        );
    }

    pub fn push_maps(
        &mut self,
        t: f64,
        ids: Vec<u32>,
        cross: Vec<Arc<AttnMatrix>>,
        self_attn: Vec<Arc<AttnMatrix>>,
    ) {
        self.timesteps.push(t);
        self.ids.push(ids);
        self.cross.push(cross);
        self.self_attn.push(self_attn);
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.timesteps.len();
        if self.ids.len() != n || self.cross.len() != n || self.self_attn.len() != n {
            return Err(Error::ShapeMismatch("record lists differ in length".into()));
        }
        let layers = self.n_layers();
        let cols = self.cross.first().and_then(|l| l.first()).map(|m| m.cols());
        for s in 0..n {
            let rows = self.ids[s].len();
            if self.cross[s].len() != layers || self.self_attn[s].is_empty() {
                return Err(Error::ShapeMismatch(format!("entry {s} has inconsistent layers")));
            }
            for m in &self.cross[s] {
                if m.rows() != rows || Some(m.cols()) != cols {
                    return Err(Error::ShapeMismatch(format!("cross map shape at entry {s}")));
                }
            }
            for m in &self.self_attn[s] {
                if m.rows() != rows || m.cols() != rows {
                    return Err(Error::ShapeMismatch(format!("self map shape at entry {s}")));
                }
            }
        }
        Ok(())
    }
}

/// A selected id set with the evidence behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    #[serde(rename = "selected_ids")]
    pub ids: BTreeSet<u32>,
    pub scores: BTreeMap<u32, f64>,
    pub threshold: f64,
    pub layers_used: Vec<usize>,
}

impl Selection {
    fn from_scores(scores: BTreeMap<u32, f64>, alpha: f64, top_fraction: f64, layers_used: Vec<usize>) -> Self {
        let values: Vec<f64> = scores.values().copied().collect();
        if values.is_empty() {
            return Self {
                ids: BTreeSet::new(),
                scores,
                threshold: 0.0,
                layers_used,
            };
        }
        let threshold = adaptive_threshold(&values, alpha, top_fraction);
        let ids = scores
            .iter()
            .filter(|(_, &s)| s > threshold)
            .map(|(&id, _)| id)
            .collect();
        Self {
            ids,
            scores,
            threshold,
            layers_used,
        }
    }
}

fn mask_weights(mask: &ImageGrid) -> Result<Vec<f64>> {
    if mask.channels != 1 {
        return Err(Error::MaskShape(format!("mask has {} channels", mask.channels)));
    }
    if !mask.is_binary() {
        return Err(Error::NonBinaryMask);
    }
    Ok(mask.pixels.clone())
}

/// Mean over the chosen layers and all passes of the attention mass each token
/// places on masked pixels. Tokens absent from some passes average over the
/// passes they appear in.
pub fn mask_alignment_scores(
    record: &AttentionRecord,
    mask: &ImageGrid,
    layers: &[usize],
) -> Result<BTreeMap<u32, f64>> {
    let w = mask_weights(mask)?;
    let mut acc: BTreeMap<u32, (f64, usize)> = BTreeMap::new();
    for s in 0..record.len() {
        for &l in layers {
            let m = record.cross[s]
                .get(l)
                .ok_or_else(|| Error::InvalidParam(format!("layer {l} not in record")))?;
            if m.cols() != w.len() {
                return Err(Error::MaskShape(format!(
                    "mask has {} pixels, attention has {} columns",
                    w.len(),
                    m.cols()
                )));
            }
            for (i, &id) in record.ids[s].iter().enumerate() {
                let e = acc.entry(id).or_insert((0.0, 0));
                e.0 += m.row_dot(i, &w);
                e.1 += 1;
            }
        }
    }
    Ok(acc.into_iter().map(|(id, (sum, n))| (id, sum / n as f64)).collect())
}

/// Per layer, the summed KL divergence of every attention row from the
/// normalized column marginal, over all passes.
pub fn layer_informativeness(record: &AttentionRecord, kl_epsilon: f64) -> Vec<f64> {
    let layers = record.n_layers();
    let mut d = vec![0.0; layers];
    for s in 0..record.len() {
        for (l, m) in record.cross[s].iter().enumerate() {
            d[l] += matrix_kl(m, kl_epsilon);
        }
    }
    d
}

fn matrix_kl(m: &AttnMatrix, eps: f64) -> f64 {
    let (n, cols) = (m.rows(), m.cols());
    if n == 0 {
        return 0.0;
    }
    if let AttnMatrix::Uniform { .. } = m {
        return 0.0;
    }
    let mut marginal = vec![0.0; cols];
    let mut row = vec![0.0; cols];
    for i in 0..n {
        m.row_into(i, &mut row);
        for (q, a) in marginal.iter_mut().zip(&row) {
            *q += a;
        }
    }
    let log_q: Vec<f64> = marginal.iter().map(|q| (q / n as f64).max(eps).ln()).collect();
    let mut total = 0.0;
    for i in 0..n {
        m.row_into(i, &mut row);
        for (p, lq) in row.iter().zip(&log_q) {
            if *p > 0.0 {
                total += p * (p.max(eps).ln() - lq);
            }
        }
    }
    total
}

/// Indices of the `k` largest scores, ties toward the lower index, ascending.
pub fn select_layers(d: &[f64], k: usize) -> Result<Vec<usize>> {
    if k > d.len() {
        return Err(Error::InvalidParam(format!("top_k_layers {k} exceeds {} layers", d.len())));
    }
    let mut order: Vec<usize> = (0..d.len()).collect();
    order.sort_by(|&a, &b| d[b].total_cmp(&d[a]).then(a.cmp(&b)));
    let mut out = order[..k].to_vec();
    out.sort_unstable();
    Ok(out)
}

/// `alpha · mean(top ⌈fraction·n⌉ scores)`.
pub fn adaptive_threshold(scores: &[f64], alpha: f64, top_fraction: f64) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    let n = scores.len();
    let k = ((top_fraction * n as f64 - 1e-9).ceil() as usize).clamp(1, n);
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    alpha * sorted[..k].iter().sum::<f64>() / k as f64
}

/// Tokens whose mask-alignment score over the most informative layers exceeds
/// the adaptive threshold.
pub fn token_seeding(
    tokens: &TokenSet,
    record: &AttentionRecord,
    mask: &ImageGrid,
    params: &SelectParams,
) -> Result<Selection> {
    params.validate()?;
    record.validate()?;
    if record.is_empty() {
        mask_weights(mask)?;
        return Ok(Selection::from_scores(BTreeMap::new(), params.alpha_i, params.top_fraction, Vec::new()));
    }
    let d = layer_informativeness(record, params.kl_epsilon);
    let layers = select_layers(&d, params.top_k_layers.min(d.len()))?;
    let live = tokens.ids();
    let scores = mask_alignment_scores(record, mask, &layers)?
        .into_iter()
        .filter(|(id, _)| live.contains(id))
        .collect();
    Ok(Selection::from_scores(scores, params.alpha_i, params.top_fraction, layers))
}

/// Tokens whose self-attention mass toward `ref_set`, averaged over all layers
/// and passes, exceeds the adaptive threshold.
pub fn token_gating(
    tokens: &TokenSet,
    record: &AttentionRecord,
    ref_set: &BTreeSet<u32>,
    params: &SelectParams,
) -> Result<Selection> {
    params.validate()?;
    record.validate()?;
    let live = tokens.ids();
    let mut acc: BTreeMap<u32, (f64, usize)> = BTreeMap::new();
    let mut layers_used = BTreeSet::new();
    for s in 0..record.len() {
        let w: Vec<f64> = record.ids[s]
            .iter()
            .map(|id| if ref_set.contains(id) { 1.0 } else { 0.0 })
            .collect();
        for (l, m) in record.self_attn[s].iter().enumerate() {
            layers_used.insert(l);
            for (i, &id) in record.ids[s].iter().enumerate() {
                if !live.contains(&id) {
                    continue;
                }
                let e = acc.entry(id).or_insert((0.0, 0));
                e.0 += m.row_dot(i, &w);
                e.1 += 1;
            }
        }
    }
    let scores = acc.into_iter().map(|(id, (sum, n))| (id, sum / n as f64)).collect();
    Ok(Selection::from_scores(
        scores,
        params.alpha_a,
        params.top_fraction,
        layers_used.into_iter().collect(),
    ))
}
