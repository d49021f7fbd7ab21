mod support;

use std::collections::BTreeSet;

use proptest::prelude::*;
use support::oracle;
use vse_core::backbone::{BackboneParams, Condition, SyntheticBackbone};
use vse_core::codec::{archive_bytes, decode_mesh, encode, tokens_in_box, CodecParams, Token, TokenSet};
use vse_core::edit::{decompose, draw_noise, noise_interpolate, prune_ids, vecset_edit, EditConfig, EditRequest};
use vse_core::eval::mesh_chamfer;
use vse_core::geometry::{crop_mesh, crop_mesh_outside, render_view, Channel, ImageGrid, PrimitiveScene, Primitive};
use vse_core::scenes::EditBenchmark;
use vse_core::Vec3;

fn fixed() -> SyntheticBackbone {
    SyntheticBackbone::new(BackboneParams {
        fixed_matching: true,
        ..BackboneParams::default()
    })
    .unwrap()
}

const SIZE: usize = 64;

fn small_codec() -> CodecParams {
    CodecParams {
        n_tok: 128,
        n_surf: 4000,
        ..CodecParams::default()
    }
}

/// A one-sphere request whose target is another random token set with the
/// same ids, so fixed matching defines an exact straight-line flow.
fn sphere_request(mask_value: f64, seed: u64) -> (EditRequest, TokenSet) {
    let codec = small_codec();
    let scene = PrimitiveScene::new(vec![Primitive::sphere(Vec3::zeros(), 0.5)]).unwrap();
    let source = encode(&scene.sample_surface(codec.n_surf, seed).unwrap(), &codec, seed).unwrap();
    let noise = draw_noise(source.ids(), seed + 100);
    let target = TokenSet::new(
        source
            .tokens
            .iter()
            .map(|t| Token::from_feature(t.id, std::array::from_fn(|k| t.feature[k] + 0.1 * noise[&t.id][k])))
            .collect(),
        codec,
    )
    .unwrap();
    let view = vse_core::geometry::ViewSpec::front(SIZE);
    let mesh = scene.mesh(48).unwrap();
    let image = render_view(&mesh, &view, Channel::Normal);
    let request = EditRequest {
        source_mesh: mesh,
        source_tokens: source,
        source_view: Condition::new(image.clone(), view, None).unwrap(),
        target_view: Condition::new(image, view, Some(target.clone())).unwrap(),
        mask: ImageGrid::filled(SIZE, SIZE, 1, mask_value),
    };
    (request, target)
}

#[test]
fn empty_mask_leaves_the_archive_unchanged() {
    let (req, _) = sphere_request(0.0, 1);
    let out = vecset_edit(&req, &EditConfig::default(), &SyntheticBackbone::default()).unwrap();
    assert!(out.edit_ids.is_empty());
    assert_eq!(archive_bytes(&out.tokens).unwrap(), archive_bytes(&req.source_tokens).unwrap());
}

#[test]
fn full_mask_from_pure_noise_reaches_the_target() {
    let (req, target) = sphere_request(1.0, 2);
    for n_steps in [10, 50] {
        let cfg = EditConfig {
            t_repaint: 1.0,
            t_pruning: 1.0,
            n_steps,
            prune: false,
            fixed_matching: true,
            ..EditConfig::default()
        };
        let (edit, _) = decompose(&req.source_tokens, &req, &fixed(), &cfg).unwrap();
        let out = vecset_edit(&req, &cfg, &fixed()).unwrap();
        assert_eq!(out.edit_ids, edit);
        for tok in &out.tokens.tokens {
            if !edit.contains(&tok.id) {
                continue;
            }
            let want = target.get(tok.id).unwrap();
            for k in 0..8 {
                assert!((tok.feature[k] - want.feature[k]).abs() < 1e-5);
            }
        }
    }
}

#[test]
fn full_silhouette_covers_front_facing_tokens() {
    let (mut req, _) = sphere_request(0.0, 3);
    req.mask = render_view(&req.source_mesh, req.view(), Channel::Silhouette);
    let (edit, preserved) = decompose(&req.source_tokens, &req, &SyntheticBackbone::default(), &EditConfig::default()).unwrap();
    assert!(edit.is_disjoint(&preserved));
    let front: Vec<u32> = req
        .source_tokens
        .tokens
        .iter()
        .filter(|t| t.anchor_normal.dot(&req.view().view_dir()) > 0.0)
        .map(|t| t.id)
        .collect();
    let covered = front.iter().filter(|id| edit.contains(id)).count();
    assert!(covered as f64 >= 0.9 * front.len() as f64, "{covered} of {}", front.len());
}

#[test]
fn benchmark_selection_stays_on_sphere_a() {
    let bench = EditBenchmark::default();
    let codec = CodecParams::default();
    let req = bench.request(&codec, 0).unwrap();
    let cfg = EditConfig::default();
    let (edit, _) = decompose(&req.source_tokens, &req, &SyntheticBackbone::default(), &cfg).unwrap();
    let a_box = bench.source.primitives[0].bounding_box().inflate(0.05);
    let b_box = bench.source.primitives[1].bounding_box().inflate(0.05);
    let on_a = tokens_in_box(&req.source_tokens, &a_box);
    let precision = edit.intersection(&on_a).count() as f64 / edit.len() as f64;
    assert!(precision >= 0.9, "precision {precision}");
    assert!(edit.is_disjoint(&tokens_in_box(&req.source_tokens, &b_box)));
}

#[test]
fn benchmark_edit_preserves_b_and_reaches_the_cube() {
    let bench = EditBenchmark::default();
    let codec = CodecParams::default();
    let req = bench.request(&codec, 0).unwrap();
    let (src, tgt) = bench.meshes(codec.grid_resolution).unwrap();
    let a = vecset_edit(&req, &EditConfig::default(), &SyntheticBackbone::default()).unwrap();
    let b = vecset_edit(&req, &EditConfig::default(), &SyntheticBackbone::default()).unwrap();
    assert_eq!(archive_bytes(&a.tokens).unwrap(), archive_bytes(&b.tokens).unwrap());
    let prune = a.prune.as_ref().unwrap();
    assert!(a.edit_ids.len() <= a.edit_ids.len() + prune.removed_ids.len());
    assert!(a.preserved_ids.is_disjoint(&prune.removed_ids));
    for id in &a.preserved_ids {
        assert_eq!(a.tokens.get(*id), req.source_tokens.get(*id));
    }
    let mesh = decode_mesh(&a.tokens, codec.grid_resolution).unwrap();
    let preserved = mesh_chamfer(&crop_mesh_outside(&mesh, &bench.edit_box), &crop_mesh_outside(&src, &bench.edit_box), 0).unwrap();
    let edited = mesh_chamfer(&crop_mesh(&mesh, &bench.edit_box), &crop_mesh(&tgt, &bench.edit_box), 0).unwrap();
    assert!(preserved < 0.03, "preserved-region CD {preserved}");
    assert!(edited < 0.05, "edited-region CD {edited}");
}

#[test]
fn pruning_helps_the_preserved_region() {
    let bench = EditBenchmark::default();
    let codec = CodecParams::default();
    let src = bench.source.mesh(codec.grid_resolution).unwrap();
    let mut cds = [0.0; 2];
    for seed in 0..3 {
        let req = bench.request(&codec, seed).unwrap();
        for (i, prune) in [true, false].into_iter().enumerate() {
            let cfg = EditConfig { seed, prune, ..EditConfig::default() };
            let out = vecset_edit(&req, &cfg, &SyntheticBackbone::default()).unwrap();
            if prune {
                assert!(!out.prune.as_ref().unwrap().removed_ids.is_empty());
            }
            let mesh = decode_mesh(&out.tokens, codec.grid_resolution).unwrap();
            cds[i] += mesh_chamfer(&crop_mesh_outside(&mesh, &bench.edit_box), &crop_mesh_outside(&src, &bench.edit_box), 0).unwrap();
        }
    }
    assert!(cds[0] < cds[1], "{cds:?}");
}

#[test]
fn preserved_trajectory_ignores_the_condition() {
    let clean: Vec<[f64; 8]> = (0..5).map(|i| [i as f64; 8]).collect();
    let eps: Vec<[f64; 8]> = draw_noise(0..5, 3).into_values().collect();
    let t = 0.37;
    let a = noise_interpolate(&clean, &eps, t).unwrap();
    let (req, _) = sphere_request(1.0, 4);
    let _ = vecset_edit(&req, &EditConfig { n_steps: 4, ..EditConfig::default() }, &SyntheticBackbone::default()).unwrap();
    assert_eq!(a, noise_interpolate(&clean, &eps, t).unwrap());
}

#[test]
fn bad_configs_are_rejected() {
    let (req, _) = sphere_request(0.0, 5);
    for cfg in [
        EditConfig { t_pruning: 0.8, ..EditConfig::default() },
        EditConfig { t_repaint: 1.2, ..EditConfig::default() },
        EditConfig { n_steps: 1, ..EditConfig::default() },
    ] {
        assert!(vecset_edit(&req, &cfg, &SyntheticBackbone::default()).is_err());
    }
    let mut bad = req.clone();
    bad.mask = ImageGrid::new(16, 16, 1);
    assert_eq!(vecset_edit(&bad, &EditConfig::default(), &fixed()).unwrap_err().kind(), "mask_shape");
    bad.mask = ImageGrid::filled(SIZE, SIZE, 1, 0.5);
    assert_eq!(vecset_edit(&bad, &EditConfig::default(), &fixed()).unwrap_err().kind(), "non_binary_mask");
}

fn id_set() -> impl Strategy<Value = BTreeSet<u32>> {
    prop::collection::btree_set(0u32..64, 0..40)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn prune_algebra_matches_brute_force(e in id_set(), c in id_set(), s in id_set()) {
        let got = prune_ids(&e, &c, &s);
        prop_assert_eq!(&got, &oracle::prune(&e, &c, &s));
        prop_assert!(got.is_subset(&e));
    }
}

proptest! {
    #[test]
    fn interpolation_is_affine(c in prop::array::uniform8(-3.0f64..3.0), e in prop::array::uniform8(-3.0f64..3.0), t in 0.0f64..=1.0) {
        let v = noise_interpolate(&[c], &[e], t).unwrap()[0];
        for k in 0..8 {
            prop_assert!((v[k] - ((1.0 - t) * c[k] + t * e[k])).abs() < 1e-12);
        }
    }

    #[test]
    fn conflict_equal_to_support_changes_nothing(e in id_set(), c in id_set()) {
        prop_assert_eq!(prune_ids(&e, &c, &c), e.clone());
        prop_assert_eq!(prune_ids(&e, &BTreeSet::new(), &c), e);
    }
}
