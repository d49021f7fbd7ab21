mod support;

use proptest::prelude::*;
use support::oracle;
use vse_core::geometry::index::KdTree;
use vse_core::geometry::io::{decode_pnm, encode_pnm, obj_string, parse_obj, parse_samples_csv, samples_csv};
use vse_core::geometry::{
    chamfer_distance, crop_mesh, marching_cubes, render_view, sample_surface, scene_sdf, BoundingBox, Channel,
    ImageGrid, Primitive, PrimitiveScene, SdfGrid, TriangleMesh, ViewSpec,
};
use vse_core::Vec3;

fn point() -> impl Strategy<Value = Vec3> {
    prop::array::uniform3(-1.0f64..1.0).prop_map(Vec3::from)
}

fn cloud(max: usize) -> impl Strategy<Value = Vec<Vec3>> {
    prop::collection::vec(point(), 1..max)
}

fn any_box() -> impl Strategy<Value = BoundingBox> {
    (point(), prop::array::uniform3(0.05f64..0.8)).prop_map(|(c, h)| BoundingBox::from_center_half(c, Vec3::from(h)).unwrap())
}

#[test]
fn sphere_at_64_is_a_closed_genus_zero_surface() {
    let sphere = Primitive::sphere(Vec3::zeros(), 0.5);
    let grid = SdfGrid::from_fn(64, Vec3::repeat(-1.0), Vec3::repeat(2.0), |p| sphere.sdf(p)).unwrap();
    let mesh = marching_cubes(&grid, 0.0).unwrap();
    assert!(mesh.watertight);
    assert_eq!(mesh.euler_characteristic(), 2);
    let diag = grid.cell_diagonal();
    let worst = mesh.vertices.iter().map(|v| sphere.sdf(v).abs()).fold(0.0, f64::max);
    assert!(worst < diag, "{worst} vs {diag}");
}

#[test]
fn two_disjoint_spheres_have_euler_characteristic_four() {
    let scene = PrimitiveScene::new(vec![
        Primitive::sphere(Vec3::new(-0.45, 0.0, 0.0), 0.3),
        Primitive::sphere(Vec3::new(0.45, 0.0, 0.0), 0.3),
    ])
    .unwrap();
    assert_eq!(scene.mesh(64).unwrap().euler_characteristic(), 4);
}

#[test]
fn extracted_surfaces_track_random_scenes() {
    for seed in 0..6 {
        let scene = PrimitiveScene::random(seed);
        let grid = SdfGrid::from_fn(64, Vec3::repeat(-1.0), Vec3::repeat(2.0), |p| scene_sdf(&scene, p)).unwrap();
        let mesh = marching_cubes(&grid, 0.0).unwrap();
        let a: Vec<Vec3> = sample_surface(&mesh, 3000, seed).unwrap().iter().map(|s| s.position).collect();
        let b: Vec<Vec3> = scene.sample_surface(3000, seed).unwrap().iter().map(|s| s.position).collect();
        let cell = grid.spacing().x;
        let cd = chamfer_distance(&a, &b).unwrap();
        assert!(cd < 2.0 * cell, "scene {seed}: {cd}");
    }
}

#[test]
fn sphere_sdf_is_signed_distance() {
    let sphere = Primitive::sphere(Vec3::zeros(), 0.5);
    assert_eq!(sphere.sdf(&Vec3::zeros()), -0.5);
    assert_eq!(sphere.sdf(&Vec3::new(1.0, 0.0, 0.0)), 0.5);
}

#[test]
fn all_positive_grid_has_no_surface() {
    let grid = SdfGrid::from_fn(8, Vec3::zeros(), Vec3::repeat(1.0), |_| 1.0).unwrap();
    assert!(marching_cubes(&grid, 0.0).unwrap().is_empty());
}

#[test]
fn front_quad_renders_its_normal() {
    let quad = TriangleMesh::quad(Vec3::zeros(), 0.5);
    let view = ViewSpec::front(32);
    let img = render_view(&quad, &view, Channel::Normal);
    let centre = img.pixel(16 * 32 + 16);
    assert_eq!(centre, &[0.5, 0.5, 1.0]);
    let empty = render_view(&TriangleMesh::empty(), &view, Channel::Silhouette);
    assert_eq!(empty.count_nonzero(), 0);
}

#[test]
fn obj_and_pnm_round_trip() {
    let mesh = TriangleMesh::icosphere(Vec3::new(0.1, -0.2, 0.3), 0.4, 2);
    let back = parse_obj(&obj_string(&mesh)).unwrap();
    assert_eq!(back.faces, mesh.faces);
    for (a, b) in back.vertices.iter().zip(&mesh.vertices) {
        assert!((a - b).norm() < 1e-6);
    }
    let img = render_view(&mesh, &ViewSpec::front(16), Channel::Normal);
    let q = decode_pnm(&encode_pnm(&img).unwrap()).unwrap();
    assert!(q.same_shape(&img));
    assert!(q.pixels.iter().zip(&img.pixels).all(|(a, b)| (a - b).abs() <= 0.5 / 255.0 + 1e-12));
    let samples = sample_surface(&mesh, 50, 1).unwrap();
    let parsed = parse_samples_csv(&samples_csv(&samples)).unwrap();
    assert_eq!(parsed.len(), 50);
    assert!(parsed.iter().zip(&samples).all(|(a, b)| (a.position - b.position).norm() < 1e-6));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn chamfer_is_symmetric_and_matches_brute_force(a in cloud(60), b in cloud(60)) {
        let ab = chamfer_distance(&a, &b).unwrap();
        prop_assert!((ab - chamfer_distance(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!((ab - oracle::chamfer(&a, &b)).abs() < 1e-12);
        prop_assert_eq!(chamfer_distance(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn kd_tree_nearest_matches_linear_scan(pts in cloud(80), q in point(), r in 0.05f64..0.8) {
        let tree = KdTree::new(&pts);
        let (i, d2) = tree.nearest(&q).unwrap();
        let best = pts.iter().map(|p| (p - q).norm_squared()).fold(f64::INFINITY, f64::min);
        prop_assert_eq!(d2, best);
        prop_assert_eq!((pts[i] - q).norm_squared(), best);
        let mut got: Vec<usize> = tree.within_radius(&q, r).into_iter().map(|(i, _)| i).collect();
        got.sort();
        let want: Vec<usize> = (0..pts.len()).filter(|&i| (pts[i] - q).norm() <= r).collect();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn crop_is_idempotent_and_stays_inside(b in any_box()) {
        let mesh = TriangleMesh::icosphere(Vec3::zeros(), 0.5, 2);
        let once = crop_mesh(&mesh, &b);
        let twice = crop_mesh(&once, &b);
        prop_assert!((once.area() - twice.area()).abs() < 1e-9);
        prop_assert_eq!(once.faces.len(), twice.faces.len());
        let grown = b.inflate(1e-9);
        prop_assert!(once.vertices.iter().all(|v| grown.contains(v)));
    }

    #[test]
    fn cropped_silhouette_is_inside_the_full_one(b in any_box(), az in 0.0f64..360.0) {
        let mesh = TriangleMesh::icosphere(Vec3::zeros(), 0.5, 2);
        let view = ViewSpec::new(az, 20.0, 32, 1.0).unwrap();
        let full = render_view(&mesh, &view, Channel::Silhouette);
        let part = render_view(&crop_mesh(&mesh, &b), &view, Channel::Silhouette);
        prop_assert!(part.pixels.iter().zip(&full.pixels).all(|(p, f)| *p <= *f));
        prop_assert_eq!(&full, &render_view(&mesh, &view, Channel::Silhouette));
    }

    #[test]
    fn dilation_grows_the_mask(bits in prop::collection::vec(prop::bool::weighted(0.1), 64), r in 0usize..3) {
        let img = ImageGrid::from_pixels(8, 8, 1, bits.iter().map(|&b| b as u8 as f64).collect()).unwrap();
        let d = img.dilated(r);
        prop_assert!(d.is_binary());
        prop_assert!(img.pixels.iter().zip(&d.pixels).all(|(a, b)| *a <= *b));
        if r == 0 {
            prop_assert_eq!(d, img);
        }
    }
}
