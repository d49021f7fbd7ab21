use proptest::prelude::*;
use vse_core::codec::{
    archive_bytes, archive_from_bytes, decode_mesh, decode_sdf, encode, tokens_in_box, CodecParams, TokenSet,
};
use vse_core::eval::mesh_points;
use vse_core::geometry::{chamfer_distance, BoundingBox, Primitive, PrimitiveScene};
use vse_core::scenes::suite_scenes;
use vse_core::Vec3;

fn small() -> CodecParams {
    CodecParams {
        n_tok: 256,
        n_surf: 6000,
        ..CodecParams::default()
    }
}

fn sphere_tokens(seed: u64) -> TokenSet {
    let scene = PrimitiveScene::new(vec![Primitive::sphere(Vec3::zeros(), 0.5)]).unwrap();
    let codec = small();
    encode(&scene.sample_surface(codec.n_surf, seed).unwrap(), &codec, seed).unwrap()
}

#[test]
fn round_trip_stays_close_on_suite_scenes() {
    let codec = CodecParams::default();
    for (i, scene) in suite_scenes(3, 0).iter().enumerate() {
        let tokens = encode(&scene.sample_surface(codec.n_surf, i as u64).unwrap(), &codec, i as u64).unwrap();
        let mesh = decode_mesh(&tokens, codec.grid_resolution).unwrap();
        let truth: Vec<Vec3> = scene.sample_surface(10_000, 99).unwrap().iter().map(|s| s.position).collect();
        let cd = chamfer_distance(&mesh_points(&mesh, 0).unwrap(), &truth).unwrap();
        assert!(cd < 0.02, "scene {i}: {cd}");
    }
}

#[test]
fn tokens_carry_their_pose() {
    let tokens = sphere_tokens(1);
    assert_eq!(tokens.len(), 256);
    for t in &tokens.tokens {
        assert!((t.anchor_normal.norm() - 1.0).abs() < 1e-6);
        let pose: Vec<f64> = t.anchor_position.iter().chain(t.anchor_normal.iter()).copied().collect();
        assert_eq!(&t.feature[..6], &pose[..]);
    }
}

#[test]
fn archive_is_bit_exact() {
    let tokens = sphere_tokens(2);
    let (header, bin) = archive_bytes(&tokens).unwrap();
    let back = archive_from_bytes(&header, &bin).unwrap();
    assert_eq!(back, tokens);
    assert_eq!(archive_bytes(&back).unwrap(), (header, bin));
}

#[test]
fn archive_rejects_truncated_bodies() {
    let (header, bin) = archive_bytes(&sphere_tokens(3)).unwrap();
    assert_eq!(archive_from_bytes(&header, &bin[..bin.len() - 4]).unwrap_err().kind(), "parse");
}

#[test]
fn encode_needs_enough_samples() {
    let scene = PrimitiveScene::new(vec![Primitive::sphere(Vec3::zeros(), 0.5)]).unwrap();
    let err = encode(&scene.sample_surface(100, 0).unwrap(), &small(), 0).unwrap_err();
    assert_eq!(err.kind(), "too_few_samples");
}

#[test]
fn box_selection_edge_cases() {
    let tokens = sphere_tokens(4);
    let all = BoundingBox::from_center_half(Vec3::zeros(), Vec3::repeat(1.0)).unwrap();
    assert_eq!(tokens_in_box(&tokens, &all), tokens.ids());
    let empty = BoundingBox::from_center_half(Vec3::repeat(0.9), Vec3::repeat(0.05)).unwrap();
    assert!(tokens_in_box(&tokens, &empty).is_empty());
    assert!(decode_mesh(&tokens.subset(&tokens_in_box(&tokens, &empty)), 32).unwrap().is_empty());
}

#[test]
fn decoded_sphere_has_the_right_sign() {
    let tokens = sphere_tokens(5);
    assert!(decode_sdf(&tokens, &Vec3::zeros()).unwrap() < 0.0);
    assert!(decode_sdf(&tokens, &Vec3::new(0.9, 0.0, 0.0)).unwrap() > 0.0);
    assert!(decode_sdf(&tokens.subset(&Default::default()), &Vec3::zeros()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn box_selection_matches_a_linear_scan(c in prop::array::uniform3(-0.6f64..0.6), h in prop::array::uniform3(0.0f64..0.7)) {
        let tokens = sphere_tokens(6);
        let b = BoundingBox::from_center_half(Vec3::from(c), Vec3::from(h)).unwrap();
        let want: std::collections::BTreeSet<u32> = tokens
            .tokens
            .iter()
            .filter(|t| (0..3).all(|k| t.anchor_position[k] >= b.min_corner[k] && t.anchor_position[k] <= b.max_corner[k]))
            .map(|t| t.id)
            .collect();
        prop_assert_eq!(tokens_in_box(&tokens, &b), want);
    }

    #[test]
    fn far_tokens_do_not_move_the_field(q in prop::array::uniform3(-0.6f64..0.6)) {
        let tokens = sphere_tokens(7);
        let q = Vec3::from(q);
        let cutoff = tokens.params.far_field_cutoff;
        let near: std::collections::BTreeSet<u32> = tokens
            .tokens
            .iter()
            .filter(|t| (t.feature_position() - q).norm() <= cutoff)
            .map(|t| t.id)
            .collect();
        prop_assume!(!near.is_empty());
        let full = decode_sdf(&tokens, &q).unwrap();
        let local = decode_sdf(&tokens.subset(&near), &q).unwrap();
        prop_assert!((full - local).abs() < 1e-6, "{} vs {}", full, local);
    }

    #[test]
    fn field_is_lipschitz(q in prop::array::uniform3(-0.8f64..0.8), dir in prop::array::uniform3(-1.0f64..1.0)) {
        let tokens = sphere_tokens(8);
        let dir = Vec3::from(dir);
        prop_assume!(dir.norm() > 1e-3);
        let q = Vec3::from(q);
        let step = dir.normalize() * 1e-4;
        let a = decode_sdf(&tokens, &q).unwrap();
        let b = decode_sdf(&tokens, &(q + step)).unwrap();
        prop_assert!((a - b).abs() <= 50.0 * 1e-4, "{} {}", a, b);
    }
}
