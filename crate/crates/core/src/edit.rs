//! Token-space RePaint editing: editable/preserved decomposition, rectified-flow
//! denoising of the editable subset, and one-shot drift-aware pruning.

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::backbone::{Backbone, Condition};
use crate::codec::{Feature, Token, TokenSet};
use crate::geometry::{ImageGrid, TriangleMesh, ViewSpec};
use crate::select::{token_gating, token_seeding, AttentionRecord, SelectParams};
use crate::{Error, Result, Vec3};

/// Stream offsets so the probe noise never coincides with the edit noise.
const PROBE_STREAM: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone)]
pub struct EditRequest {
    pub source_mesh: TriangleMesh,
    pub source_tokens: TokenSet,
    pub source_view: Condition,
    pub target_view: Condition,
    pub mask: ImageGrid,
}

impl EditRequest {
    pub fn validate(&self) -> Result<()> {
        self.source_view.validate()?;
        self.target_view.validate()?;
        if self.source_view.view != self.target_view.view {
            return Err(Error::InvalidParam("source and target views differ".into()));
        }
        let n = self.source_view.view.image_size;
        if self.mask.height != n || self.mask.width != n || self.mask.channels != 1 {
            return Err(Error::MaskShape(format!(
                "mask is {}x{}x{}, view needs {n}x{n}x1",
                self.mask.height, self.mask.width, self.mask.channels
            )));
        }
        if !self.mask.is_binary() {
            return Err(Error::NonBinaryMask);
        }
        Ok(())
    }

    /// The mask as the attention scores see it. Image-conditioned models
    /// attend over patches, so a mask reaches them rounded outward to whole
    /// patches; dilating by a pixel or two plays that role for per-pixel
    /// attention and keeps tokens sitting on the mask boundary.
    pub fn seed_mask(&self, dilation: usize) -> ImageGrid {
        if dilation == 0 {
            self.mask.clone()
        } else {
            self.mask.dilated(dilation)
        }
    }

    pub fn view(&self) -> &ViewSpec {
        &self.source_view.view
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EditConfig {
    pub t_repaint: f64,
    pub t_pruning: f64,
    pub n_steps: usize,
    #[serde(skip)]
    pub seed: u64,
    /// Configured separately in run manifests.
    #[serde(skip)]
    pub select: SelectParams,
    pub fixed_matching: bool,
    /// Off for the no-pruning ablation.
    pub prune: bool,
    /// Pixels added around the mask before scoring; see [`EditRequest::seed_mask`].
    pub mask_dilation: usize,
    /// Noise levels of the forward passes used to localize the edit.
    pub probe_timesteps: Vec<f64>,
    pub keep_snapshots: bool,
}

impl Default for EditConfig {
    fn default() -> Self {
        Self {
            t_repaint: 0.7,
            t_pruning: 0.6,
            n_steps: 50,
            seed: 0,
            select: SelectParams::default(),
            fixed_matching: false,
            prune: true,
            mask_dilation: 2,
            probe_timesteps: vec![0.9, 0.7, 0.5, 0.3, 0.1],
            keep_snapshots: false,
        }
    }
}

impl EditConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_pruning > 0.0 && self.t_pruning <= self.t_repaint && self.t_repaint <= 1.0) {
            return Err(Error::InvalidParam(format!(
                "need 0 < t_pruning ({}) <= t_repaint ({}) <= 1",
                self.t_pruning, self.t_repaint
            )));
        }
        if self.n_steps < 2 {
            return Err(Error::InvalidParam("n_steps must be at least 2".into()));
        }
        if self.probe_timesteps.iter().any(|t| !(*t > 0.0 && *t <= 1.0)) {
            return Err(Error::InvalidParam("probe timesteps must lie in (0,1]".into()));
        }
        self.select.validate()
    }

    /// Step indices `(k_start, k_prune)` on the grid `t = k / n_steps`; the
    /// pruning step snaps to the nearest grid point not above the start.
    pub fn schedule(&self) -> (usize, usize) {
        let n = self.n_steps as f64;
        let k_start = (self.t_repaint * n).round() as usize;
        let k_prune = ((self.t_pruning * n).round() as usize).min(k_start);
        (k_start, k_prune)
    }
}

/// `(1−t)·clean + t·eps`, exact at both ends.
pub fn noise_interpolate(clean: &[Feature], eps: &[Feature], t: f64) -> Result<Vec<Feature>> {
    if clean.len() != eps.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} clean rows vs {} noise rows",
            clean.len(),
            eps.len()
        )));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidParam(format!("t = {t} outside [0,1]")));
    }
    Ok(clean
        .iter()
        .zip(eps)
        .map(|(c, e)| interpolate_one(c, e, t))
        .collect())
}

fn interpolate_one(c: &Feature, e: &Feature, t: f64) -> Feature {
    if t == 0.0 {
        *c
    } else if t == 1.0 {
        *e
    } else {
        std::array::from_fn(|k| (1.0 - t) * c[k] + t * e[k])
    }
}

/// One standard-normal feature per id, drawn in id order.
pub fn draw_noise(ids: impl IntoIterator<Item = u32>, seed: u64) -> BTreeMap<u32, Feature> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.into_iter()
        .map(|id| (id, std::array::from_fn(|_| StandardNormal.sample(&mut rng))))
        .collect()
}

/// `E \ (C \ S)`.
pub fn prune_ids(edit: &BTreeSet<u32>, conflict: &BTreeSet<u32>, cond: &BTreeSet<u32>) -> BTreeSet<u32> {
    let drop: BTreeSet<u32> = conflict.difference(cond).copied().collect();
    edit.difference(&drop).copied().collect()
}

#[derive(Debug, Clone)]
pub struct EditState {
    pub t: f64,
    /// Editable tokens; anchors follow their features.
    pub edit_tokens: TokenSet,
    /// Clean preserved tokens; anchors stay fixed.
    pub preserved_tokens: TokenSet,
    pub preserved_noise: BTreeMap<u32, Feature>,
    pub edit_ids: BTreeSet<u32>,
    pub record: AttentionRecord,
    /// Anchors of every token before editing, for drift measurement.
    pub source_anchors: BTreeMap<u32, Vec3>,
}

impl EditState {
    pub fn preserved_ids(&self) -> BTreeSet<u32> {
        self.preserved_tokens.ids()
    }

    /// Preserved tokens at noise level `t`.
    pub fn preserved_at(&self, t: f64) -> Vec<Token> {
        self.preserved_tokens
            .tokens
            .iter()
            .map(|p| Token {
                feature: interpolate_one(&p.feature, &self.preserved_noise[&p.id], t),
                ..*p
            })
            .collect()
    }

    /// `V_E ⊕ V_P^{(t)}`, id ordered.
    pub fn full_tokens(&self) -> TokenSet {
        let mut all = self.edit_tokens.tokens.clone();
        all.extend(self.preserved_at(self.t));
        TokenSet::new(all, self.edit_tokens.params).expect("edit and preserved ids are disjoint")
    }

    pub fn mean_drift(&self) -> f64 {
        if self.edit_tokens.is_empty() {
            return 0.0;
        }
        self.edit_tokens
            .tokens
            .iter()
            .map(|t| (t.feature_position() - self.source_anchors[&t.id]).norm())
            .sum::<f64>()
            / self.edit_tokens.len() as f64
    }
}

/// Probe-time attention on the source condition, then seeding and gating.
/// Returns `(edit_ids, preserved_ids)`.
pub fn decompose(
    tokens: &TokenSet,
    request: &EditRequest,
    backbone: &dyn Backbone,
    config: &EditConfig,
) -> Result<(BTreeSet<u32>, BTreeSet<u32>)> {
    request.validate()?;
    config.validate()?;
    let all = tokens.ids();
    if request.mask.count_nonzero() == 0 || tokens.is_empty() {
        return Ok((BTreeSet::new(), all));
    }
    let record = probe_record(tokens, &request.source_view, backbone, config)?;
    let mask = request.seed_mask(config.mask_dilation);
    let seeds = token_seeding(tokens, &record, &mask, &config.select)?;
    let gated = token_gating(tokens, &record, &seeds.ids, &config.select)?;
    let edit: BTreeSet<u32> = seeds.ids.union(&gated.ids).copied().collect();
    let preserved = all.difference(&edit).copied().collect();
    Ok((edit, preserved))
}

/// Forward passes over noise-interpolated copies of `tokens` at the probe
/// timesteps. Anchors stay at their clean positions.
pub fn probe_record(
    tokens: &TokenSet,
    cond: &Condition,
    backbone: &dyn Backbone,
    config: &EditConfig,
) -> Result<AttentionRecord> {
    let mut cond = cond.clone();
    if cond.target_tokens.is_none() {
        cond.target_tokens = Some(tokens.clone());
    }
    let eps = draw_noise(tokens.ids(), config.seed ^ PROBE_STREAM);
    let mut record = AttentionRecord::default();
    for &t in &config.probe_timesteps {
        let noisy = TokenSet::new(
            tokens
                .tokens
                .iter()
                .map(|tok| Token {
                    feature: interpolate_one(&tok.feature, &eps[&tok.id], t),
                    ..*tok
                })
                .collect(),
            tokens.params,
        )?;
        let out = backbone.forward(&noisy, &cond, t)?;
        record.push(t, &noisy, &out);
    }
    Ok(record)
}

/// One Euler step of size `dt` for the editable tokens; preserved tokens are
/// re-noised to `t − dt`. Attention is appended to the record when
/// `record_attention` is set.
pub fn repaint_step(
    state: &mut EditState,
    backbone: &dyn Backbone,
    cond: &Condition,
    dt: f64,
    record_attention: bool,
) -> Result<()> {
    if !(dt > 0.0) || state.t + 1e-12 < dt {
        return Err(Error::StepOutOfRange { t: state.t, dt });
    }
    let next_t = if (state.t - dt).abs() < 1e-12 { 0.0 } else { state.t - dt };
    if state.edit_tokens.is_empty() && !record_attention {
        state.t = next_t;
        return Ok(());
    }
    let full = state.full_tokens();
    let velocity = if record_attention {
        let out = backbone.forward(&full, cond, state.t)?;
        state.record.push(state.t, &full, &out);
        out.velocity
    } else {
        backbone.velocity(&full, cond, state.t)?
    };
    let by_id: BTreeMap<u32, &Feature> = full.tokens.iter().map(|t| t.id).zip(velocity.iter()).collect();
    for tok in state.edit_tokens.tokens.iter_mut() {
        let u = by_id[&tok.id];
        let f: Feature = std::array::from_fn(|k| tok.feature[k] - u[k] * dt);
        *tok = Token::from_feature(tok.id, f);
    }
    state.t = next_t;
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PruneReport {
    pub t: f64,
    pub cond_ids: BTreeSet<u32>,
    pub conflict_ids: BTreeSet<u32>,
    pub removed_ids: BTreeSet<u32>,
}

/// Removes editable tokens that attend to the preserved region without
/// support from the edit mask.
pub fn drift_prune(
    state: &mut EditState,
    backbone: &dyn Backbone,
    request: &EditRequest,
    config: &EditConfig,
) -> Result<PruneReport> {
    let full = state.full_tokens();
    if state.record.is_empty() && !full.is_empty() {
        let t = if state.t > 0.0 { state.t } else { 1.0 / config.n_steps as f64 };
        let out = backbone.forward(&full, &request.target_view, t)?;
        state.record.push(t, &full, &out);
    }
    let cond = token_seeding(&full, &state.record, &request.seed_mask(config.mask_dilation), &config.select)?;
    let conflict = token_gating(&full, &state.record, &state.preserved_ids(), &config.select)?;
    let kept = prune_ids(&state.edit_ids, &conflict.ids, &cond.ids);
    let removed: BTreeSet<u32> = state.edit_ids.difference(&kept).copied().collect();
    state.edit_tokens = state.edit_tokens.subset(&kept);
    state.edit_ids = kept;
    Ok(PruneReport {
        t: state.t,
        cond_ids: cond.ids,
        conflict_ids: conflict.ids,
        removed_ids: removed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostic {
    pub t: f64,
    pub n_edit: usize,
    pub mean_drift: f64,
}

#[derive(Debug, Clone)]
pub struct EditOutcome {
    pub tokens: TokenSet,
    pub edit_ids: BTreeSet<u32>,
    pub preserved_ids: BTreeSet<u32>,
    pub prune: Option<PruneReport>,
    pub diagnostics: Vec<StepDiagnostic>,
    /// Editable anchor positions after each step, when requested.
    pub snapshots: Vec<(f64, Vec<Vec3>)>,
}

pub fn diagnostics_csv(diag: &[StepDiagnostic]) -> String {
    let mut s = String::from("t,n_edit,mean_drift\n");
    for d in diag {
        s.push_str(&format!("{},{},{}\n", d.t, d.n_edit, d.mean_drift));
    }
    s
}

/// The full edit: decompose, RePaint from `t_repaint` to 0 with one pruning
/// pass at `t_pruning`, and return the final token set.
pub fn vecset_edit(request: &EditRequest, config: &EditConfig, backbone: &dyn Backbone) -> Result<EditOutcome> {
    request.validate()?;
    config.validate()?;
    let source = &request.source_tokens;
    let (edit_ids, preserved_ids) = decompose(source, request, backbone, config)?;
    let n = config.n_steps;
    let (k_start, k_prune) = config.schedule();
    let t_start = k_start as f64 / n as f64;
    let eps = draw_noise(source.ids(), config.seed);
    let edit_tokens = TokenSet::new(
        source
            .tokens
            .iter()
            .filter(|t| edit_ids.contains(&t.id))
            .map(|t| Token::from_feature(t.id, interpolate_one(&t.feature, &eps[&t.id], t_start)))
            .collect(),
        source.params,
    )?;
    let preserved_tokens = source.subset(&preserved_ids);
    let preserved_noise = preserved_ids.iter().map(|id| (*id, eps[id])).collect();
    let mut state = EditState {
        t: t_start,
        edit_tokens,
        preserved_tokens,
        preserved_noise,
        edit_ids: edit_ids.clone(),
        record: AttentionRecord::default(),
        source_anchors: source.tokens.iter().map(|t| (t.id, t.anchor_position)).collect(),
    };
    let mut prune = None;
    let mut diagnostics = Vec::with_capacity(k_start + 1);
    let mut snapshots = Vec::new();
    let do_prune = config.prune && !state.edit_ids.is_empty();
    if do_prune && k_prune == k_start {
        prune = Some(drift_prune(&mut state, backbone, request, config)?);
    }
    let dt = 1.0 / n as f64;
    for k in (1..=k_start).rev() {
        state.t = k as f64 / n as f64;
        let record = do_prune && k > k_prune;
        repaint_step(&mut state, backbone, &request.target_view, dt, record)?;
        state.t = (k - 1) as f64 / n as f64;
        if do_prune && k - 1 == k_prune && k_prune < k_start {
            prune = Some(drift_prune(&mut state, backbone, request, config)?);
        }
        diagnostics.push(StepDiagnostic {
            t: state.t,
            n_edit: state.edit_tokens.len(),
            mean_drift: state.mean_drift(),
        });
        if config.keep_snapshots {
            snapshots.push((state.t, state.edit_tokens.positions()));
        }
    }
    let mut out = state.edit_tokens.tokens.clone();
    out.extend(state.preserved_at(state.t));
    Ok(EditOutcome {
        tokens: TokenSet::new(out, source.params)?,
        edit_ids: state.edit_ids,
        preserved_ids,
        prune,
        diagnostics,
        snapshots,
    })
}

/// Anchor scatter plot: preserved anchors gray, editable anchors red.
pub fn render_scatter(edit: &[Vec3], preserved: &[Vec3], view: &ViewSpec) -> ImageGrid {
    let n = view.image_size;
    let mut img = ImageGrid::filled(n, n, 3, 1.0);
    let mut plot = |p: &Vec3, rgb: [f64; 3]| {
        let (u, v) = view.project(p);
        if !(0.0..1.0).contains(&u) || !(0.0..1.0).contains(&v) {
            return;
        }
        let (col, row) = ((u * n as f64) as usize, (v * n as f64) as usize);
        for c in 0..3 {
            img.set(row, col, c, rgb[c]);
        }
    };
    for p in preserved {
        plot(p, [0.6, 0.6, 0.6]);
    }
    for p in edit {
        plot(p, [0.9, 0.1, 0.1]);
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::{BackboneParams, SyntheticBackbone};
    use crate::codec::{CodecParams, FEATURE_DIM};

    fn random_tokens(n: u32, seed: u64) -> TokenSet {
        let noise = draw_noise(0..n, seed);
        TokenSet::new(
            noise.iter().map(|(&id, f)| Token::from_feature(id, f.map(|x| 0.3 * x))).collect(),
            CodecParams::default(),
        )
        .unwrap()
    }

    #[test]
    fn interpolation_endpoints() {
        let c = vec![[1.5; FEATURE_DIM]];
        let e = vec![[-2.25; FEATURE_DIM]];
        assert_eq!(noise_interpolate(&c, &e, 0.0).unwrap(), c);
        assert_eq!(noise_interpolate(&c, &e, 1.0).unwrap(), e);
        let mid = noise_interpolate(&[[0.0; FEATURE_DIM]], &[[2.0; FEATURE_DIM]], 0.5).unwrap();
        assert_eq!(mid[0], [1.0; FEATURE_DIM]);
        assert!(noise_interpolate(&c, &[], 0.5).is_err());
    }

    #[test]
    fn schedule_snaps_to_grid() {
        let cfg = EditConfig::default();
        assert_eq!(cfg.schedule(), (35, 30));
        let cfg = EditConfig {
            t_repaint: 0.7,
            t_pruning: 0.69,
            n_steps: 10,
            ..EditConfig::default()
        };
        assert_eq!(cfg.schedule(), (7, 7));
    }

    #[test]
    fn prune_algebra_examples() {
        let s = |v: &[u32]| v.iter().copied().collect::<BTreeSet<u32>>();
        let e = s(&[1, 2, 3, 4]);
        assert_eq!(prune_ids(&e, &s(&[]), &s(&[2])), e);
        assert_eq!(prune_ids(&e, &s(&[2, 3]), &s(&[2, 3])), e);
        assert_eq!(prune_ids(&e, &s(&[2, 3, 9]), &s(&[3])), s(&[1, 3, 4]));
    }

    fn exact_state(n_tok: u32, seed: u64) -> (EditState, Condition, TokenSet) {
        let target = random_tokens(n_tok, seed);
        let eps = draw_noise(target.ids(), seed + 1);
        let start = TokenSet::new(
            eps.iter().map(|(&id, f)| Token::from_feature(id, *f)).collect(),
            CodecParams::default(),
        )
        .unwrap();
        let cond = Condition::new(ImageGrid::new(16, 16, 3), ViewSpec::front(16), Some(target.clone())).unwrap();
        let state = EditState {
            t: 1.0,
            edit_ids: start.ids(),
            source_anchors: start.tokens.iter().map(|t| (t.id, t.anchor_position)).collect(),
            edit_tokens: start,
            preserved_tokens: TokenSet::new(vec![], CodecParams::default()).unwrap(),
            preserved_noise: BTreeMap::new(),
            record: AttentionRecord::default(),
        };
        (state, cond, target)
    }

    #[test]
    fn single_unit_step_lands_on_target() {
        let bb = SyntheticBackbone::new(BackboneParams {
            fixed_matching: true,
            ..BackboneParams::default()
        })
        .unwrap();
        let (mut state, cond, target) = exact_state(20, 3);
        repaint_step(&mut state, &bb, &cond, 1.0, false).unwrap();
        assert_eq!(state.t, 0.0);
        for (a, b) in state.edit_tokens.tokens.iter().zip(&target.tokens) {
            for k in 0..FEATURE_DIM {
                assert!((a.feature[k] - b.feature[k]).abs() < 1e-12);
            }
        }
        assert!(matches!(
            repaint_step(&mut state, &bb, &cond, 0.5, false),
            Err(Error::StepOutOfRange { .. })
        ));
    }

    #[test]
    fn euler_telescopes_to_target() {
        let bb = SyntheticBackbone::new(BackboneParams {
            fixed_matching: true,
            ..BackboneParams::default()
        })
        .unwrap();
        for n in [10usize, 50] {
            let (mut state, cond, target) = exact_state(64, 7);
            for k in (1..=n).rev() {
                state.t = k as f64 / n as f64;
                repaint_step(&mut state, &bb, &cond, 1.0 / n as f64, false).unwrap();
            }
            for (a, b) in state.edit_tokens.tokens.iter().zip(&target.tokens) {
                for k in 0..FEATURE_DIM {
                    assert!((a.feature[k] - b.feature[k]).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn preserved_only_step_is_pure_interpolation() {
        let bb = SyntheticBackbone::default();
        let clean = random_tokens(10, 1);
        let noise = draw_noise(clean.ids(), 2);
        let cond = Condition::new(ImageGrid::new(16, 16, 3), ViewSpec::front(16), Some(clean.clone())).unwrap();
        let mut state = EditState {
            t: 0.5,
            edit_tokens: TokenSet::new(vec![], CodecParams::default()).unwrap(),
            preserved_tokens: clean.clone(),
            preserved_noise: noise.clone(),
            edit_ids: BTreeSet::new(),
            record: AttentionRecord::default(),
            source_anchors: BTreeMap::new(),
        };
        repaint_step(&mut state, &bb, &cond, 0.1, false).unwrap();
        let want = noise_interpolate(&clean.features(), &noise.values().copied().collect::<Vec<_>>(), 0.4).unwrap();
        assert_eq!(state.full_tokens().features(), want);
    }
}
