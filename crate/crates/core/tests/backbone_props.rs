use std::collections::BTreeSet;
use std::time::Instant;

use proptest::prelude::*;
use vse_core::backbone::{
    cross_attention_maps, self_attention_maps, AttnMatrix, Backbone, BackboneParams, Condition, SyntheticBackbone,
};
use vse_core::codec::{encode, CodecParams, Token, TokenSet};
use vse_core::geometry::{render_view, Channel, ImageGrid, Primitive, PrimitiveScene, ViewSpec};
use vse_core::select::{
    adaptive_threshold, layer_informativeness, mask_alignment_scores, token_gating, token_seeding, AttentionRecord,
    SelectParams,
};
use vse_core::Vec3;

fn sphere_tokens(n_tok: usize, seed: u64) -> (PrimitiveScene, TokenSet) {
    let scene = PrimitiveScene::new(vec![Primitive::sphere(Vec3::zeros(), 0.5)]).unwrap();
    let codec = CodecParams {
        n_tok,
        n_surf: 4 * n_tok,
        ..CodecParams::default()
    };
    let tokens = encode(&scene.sample_surface(codec.n_surf, seed).unwrap(), &codec, seed).unwrap();
    (scene, tokens)
}

fn condition(scene: &PrimitiveScene, target: &TokenSet, size: usize) -> Condition {
    let view = ViewSpec::front(size);
    let image = render_view(&scene.mesh(32).unwrap(), &view, Channel::Normal);
    Condition::new(image, view, Some(target.clone())).unwrap()
}

fn rows_are_stochastic(m: &AttnMatrix) -> bool {
    (0..m.rows()).all(|i| (m.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-6)
}

fn shifted(tokens: &TokenSet, by: Vec3) -> TokenSet {
    let moved = tokens
        .tokens
        .iter()
        .map(|t| {
            let mut f = t.feature;
            for k in 0..3 {
                f[k] += by[k];
            }
            Token::from_feature(t.id, f)
        })
        .collect();
    TokenSet::new(moved, tokens.params).unwrap()
}

#[test]
fn full_forward_on_512_tokens_is_fast_and_normalized() {
    let (scene, tokens) = sphere_tokens(512, 0);
    let cond = condition(&scene, &tokens, 64);
    let bb = SyntheticBackbone::default();
    let start = Instant::now();
    let out = bb.forward(&tokens, &cond, 0.7).unwrap();
    assert!(start.elapsed().as_secs_f64() < 1.0, "{:?}", start.elapsed());
    assert_eq!(out.cross_attention.len(), bb.n_layers());
    assert!(out.cross_attention.iter().chain(&out.self_attention).all(|m| rows_are_stochastic(m)));
    assert!(out.velocity.iter().flatten().all(|v| v.is_finite()));
}

#[test]
fn uniform_layer_and_single_token() {
    let p = vec![Vec3::new(0.1, 0.2, 0.3)];
    let n = vec![Vec3::z()];
    let maps = cross_attention_maps(&p, &n, &ViewSpec::front(8), &BackboneParams::default());
    let last = maps.last().unwrap();
    assert!(last.row(0).iter().all(|&v| v == 1.0 / 64.0));
    let slf = self_attention_maps(&p, &BackboneParams::default());
    assert_eq!(slf[0].row(0), vec![1.0]);
}

#[test]
fn velocity_vanishes_at_the_target() {
    let (scene, tokens) = sphere_tokens(128, 1);
    let cond = condition(&scene, &tokens, 32);
    let bb = SyntheticBackbone::default();
    for t in [1.0, 0.5, 0.01] {
        assert!(bb.velocity(&tokens, &cond, t).unwrap().iter().flatten().all(|&v| v == 0.0));
    }
    assert_eq!(bb.velocity(&tokens, &cond, 0.0).unwrap_err().kind(), "velocity_at_zero");
}

#[test]
fn uniform_layer_is_least_informative_on_a_real_scene() {
    let (scene, tokens) = sphere_tokens(128, 2);
    let cond = condition(&scene, &tokens, 32);
    let out = SyntheticBackbone::default().forward(&tokens, &cond, 0.5).unwrap();
    let mut record = AttentionRecord::default();
    record.push(0.5, &tokens, &out);
    let d = layer_informativeness(&record, 1e-12);
    let last = *d.last().unwrap();
    assert!(d[..d.len() - 1].iter().all(|&v| v > last), "{d:?}");
}

#[test]
fn gating_stays_inside_a_separated_cluster() {
    let params = BackboneParams::default();
    let spread = 10.0 * params.self_bandwidth.sqrt();
    let mut pos = Vec::new();
    for i in 0..12 {
        let jitter = Vec3::new(0.0, 0.03 * (i % 4) as f64, 0.03 * (i / 4) as f64);
        pos.push(Vec3::new(-0.5 * spread - 0.05, 0.0, 0.0) + jitter);
        pos.push(Vec3::new(0.5 * spread + 0.05, 0.0, 0.0) + jitter);
    }
    let tokens = TokenSet::new(
        pos.iter()
            .enumerate()
            .map(|(i, p)| Token::from_feature(i as u32, [p.x, p.y, p.z, 0.0, 0.0, 1.0, 0.0, 0.0]))
            .collect(),
        CodecParams::default(),
    )
    .unwrap();
    let mut record = AttentionRecord::default();
    let cross = cross_attention_maps(&pos, &vec![Vec3::z(); pos.len()], &ViewSpec::front(8), &params);
    record.push_maps(0.5, (0..pos.len() as u32).collect(), cross, self_attention_maps(&pos, &params));
    let left: BTreeSet<u32> = (0..pos.len() as u32).filter(|i| i % 2 == 0).collect();
    let seed: BTreeSet<u32> = left.iter().take(3).copied().collect();
    let gated = token_gating(&tokens, &record, &seed, &SelectParams::default()).unwrap().ids;
    assert!(!gated.is_empty());
    assert!(gated.is_subset(&left), "{gated:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn every_layer_is_row_stochastic(
        pts in prop::collection::vec(prop::array::uniform3(-0.9f64..0.9), 1..40),
        nrm in prop::collection::vec(prop::array::uniform3(-1.0f64..1.0), 40),
        az in 0.0f64..360.0,
    ) {
        let pos: Vec<Vec3> = pts.iter().map(|p| Vec3::from(*p)).collect();
        let normals: Vec<Vec3> = nrm[..pos.len()].iter().map(|n| Vec3::from(*n).try_normalize(1e-6).unwrap_or(Vec3::z())).collect();
        let view = ViewSpec::new(az, 10.0, 16, 1.0).unwrap();
        let params = BackboneParams::default();
        for m in cross_attention_maps(&pos, &normals, &view, &params).iter().chain(&self_attention_maps(&pos, &params)) {
            prop_assert!(rows_are_stochastic(m));
        }
    }

    #[test]
    fn matching_ignores_a_common_translation(seed in 0u64..20, off in prop::array::uniform3(-0.3f64..0.3)) {
        let (_, source) = sphere_tokens(64, seed);
        let (_, target) = sphere_tokens(64, seed + 50);
        let bb = SyntheticBackbone::default();
        let off = Vec3::from(off);
        prop_assert_eq!(
            bb.matching(&source, &target).unwrap(),
            bb.matching(&shifted(&source, off), &shifted(&target, off)).unwrap()
        );
    }

    #[test]
    fn growing_the_mask_never_lowers_a_score(seed in 0u64..50, extra in prop::collection::vec(prop::bool::weighted(0.2), 256)) {
        let (_, tokens) = sphere_tokens(48, seed);
        let pos = tokens.positions();
        let nrm: Vec<Vec3> = tokens.tokens.iter().map(|t| t.anchor_normal).collect();
        let params = BackboneParams::default();
        let mut record = AttentionRecord::default();
        record.push_maps(0.5, tokens.ids().into_iter().collect(), cross_attention_maps(&pos, &nrm, &ViewSpec::front(16), &params), self_attention_maps(&pos, &params));
        let mut small = ImageGrid::new(16, 16, 1);
        for r in 4..8 {
            for c in 4..10 {
                small.set(r, c, 0, 1.0);
            }
        }
        let mut big = small.clone();
        for (j, e) in extra.iter().enumerate() {
            if *e {
                big.pixels[j] = 1.0;
            }
        }
        let layers: Vec<usize> = (0..params.n_layers).collect();
        let a = mask_alignment_scores(&record, &small, &layers).unwrap();
        let b = mask_alignment_scores(&record, &big, &layers).unwrap();
        for (id, s) in &a {
            prop_assert!(b[id] >= *s - 1e-12);
        }
        let empty = mask_alignment_scores(&record, &ImageGrid::new(16, 16, 1), &layers).unwrap();
        prop_assert!(empty.values().all(|&s| s == 0.0));
    }

    #[test]
    fn threshold_scales_with_the_scores(scores in prop::collection::vec(0.0f64..1.0, 1..50), c in 0.1f64..10.0) {
        let tau = adaptive_threshold(&scores, 0.5, 0.1);
        let scaled: Vec<f64> = scores.iter().map(|s| s * c).collect();
        let tau_c = adaptive_threshold(&scaled, 0.5, 0.1);
        prop_assert!((tau_c - c * tau).abs() <= 1e-12 * (1.0 + tau_c.abs()));
        let picked = |v: &[f64], t: f64| v.iter().map(|s| *s > t).collect::<Vec<_>>();
        // Exact ties with the threshold can flip under rounding; skip those.
        prop_assume!(scores.iter().all(|s| (s - tau).abs() > 1e-9));
        prop_assert_eq!(picked(&scores, tau), picked(&scaled, tau_c));
    }

    #[test]
    fn seeding_ignores_row_order(seed in 0u64..50, perm_seed in any::<u64>()) {
        let (_, tokens) = sphere_tokens(32, seed);
        let pos = tokens.positions();
        let nrm: Vec<Vec3> = tokens.tokens.iter().map(|t| t.anchor_normal).collect();
        let params = BackboneParams::default();
        let view = ViewSpec::front(16);
        let ids: Vec<u32> = tokens.ids().into_iter().collect();
        let mut order: Vec<usize> = (0..ids.len()).collect();
        let mut s = perm_seed | 1;
        for i in (1..order.len()).rev() {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            order.swap(i, (s % (i as u64 + 1)) as usize);
        }
        let mut mask = ImageGrid::new(16, 16, 1);
        for r in 2..9 {
            for c in 3..12 {
                mask.set(r, c, 0, 1.0);
            }
        }
        let mut a = AttentionRecord::default();
        a.push_maps(0.5, ids.clone(), cross_attention_maps(&pos, &nrm, &view, &params), self_attention_maps(&pos, &params));
        let p_pos: Vec<Vec3> = order.iter().map(|&i| pos[i]).collect();
        let p_nrm: Vec<Vec3> = order.iter().map(|&i| nrm[i]).collect();
        let p_ids: Vec<u32> = order.iter().map(|&i| ids[i]).collect();
        let mut b = AttentionRecord::default();
        b.push_maps(0.5, p_ids, cross_attention_maps(&p_pos, &p_nrm, &view, &params), self_attention_maps(&p_pos, &params));
        let sp = SelectParams::default();
        prop_assert_eq!(
            token_seeding(&tokens, &a, &mask, &sp).unwrap().ids,
            token_seeding(&tokens, &b, &mask, &sp).unwrap().ids
        );
    }
}

#[test]
fn dense_uniform_layer_matches_the_uniform_variant() {
    let u = AttnMatrix::Uniform { rows: 3, cols: 4 };
    let d = AttnMatrix::dense(3, 4, vec![0.25; 12]).unwrap();
    for i in 0..3 {
        assert_eq!(u.row(i), d.row(i));
    }
}
