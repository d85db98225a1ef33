use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::geometry::{pixel_to_ray, Ray};
use crate::render::{
    render_rays, sphere_trace, stratified_samples, AnalyticField, DensityKind, VolumeConfig,
};

fn small_synth() -> SynthConfig {
    SynthConfig {
        train_views: 4,
        test_views: 2,
        resolution: 24,
        ground_truth_points: 500,
        ..SynthConfig::default()
    }
}

#[test]
fn center_pixel_hits_unit_sphere_at_depth_two() {
    let cam = look_at_camera(Vec3::new(0.0, 0.0, 3.0), Vec3::zero(), 32, 32, 1.5);
    let ray = pixel_to_ray(&cam, 16.0, 16.0).unwrap();
    let hit = sphere_trace(&ray, &crate::fields::AnalyticShape::sphere(1.0), 0.0, 6.0, 1e-9, 256);
    assert!(hit.hit);
    assert!((hit.t - 2.0).abs() < 1e-8);
}

#[test]
fn synthetic_views_see_the_shape_and_shade_correctly() {
    let cfg = small_synth();
    let scene = synth_scene(&cfg).unwrap();
    assert_eq!(scene.views.len(), 6);
    assert_eq!(scene.test_views().len(), 2);
    for v in &scene.views {
        assert!(v.mask.as_ref().unwrap().count() > 0, "{}", v.name);
    }
    let l = Vec3::from_array(cfg.light).normalized();
    let c = cfg.oracle().shade(l);
    for k in 0..3 {
        assert!((c[k] - (cfg.albedo[k] + cfg.ambient)).abs() < 1e-12);
    }
    assert_eq!(synth_scene(&cfg).unwrap(), scene);
}

#[test]
fn synth_rejects_bad_configs() {
    let mut cfg = small_synth();
    cfg.shape = crate::fields::AnalyticShape::sphere(1.0);
    assert!(synth_scene(&cfg).is_err());
    let cfg = SynthConfig {
        train_views: 1,
        test_views: 0,
        ..small_synth()
    };
    assert!(synth_scene(&cfg).is_err());
}

#[test]
fn scene_round_trips_through_disk() {
    let scene = synth_scene(&small_synth()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_scene(&scene, dir.path()).unwrap();
    let back = load_scene(dir.path()).unwrap();
    assert_eq!(back.views.len(), scene.views.len());
    assert_eq!(back.ground_truth, scene.ground_truth);
    assert_eq!(back.shape, scene.shape);
    for (a, b) in scene.views.iter().zip(&back.views) {
        assert_eq!(a.camera, b.camera);
        assert_eq!(a.mask, b.mask);
        assert_eq!(a.split, b.split);
        for (p, q) in a.image.pixels().iter().zip(b.image.pixels()) {
            for k in 0..3 {
                assert!((p[k] - q[k]).abs() <= 0.5 / 255.0 + 1e-12);
            }
        }
    }
}

fn manifest_text(dir: &std::path::Path) -> String {
    std::fs::read_to_string(dir.join(MANIFEST_NAME)).unwrap()
}

#[test]
fn manifest_errors_name_the_problem() {
    let scene = synth_scene(&small_synth()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut m = save_scene(&scene, dir.path()).unwrap();

    let views = std::mem::take(&mut m.views);
    std::fs::write(dir.path().join(MANIFEST_NAME), toml::to_string(&m).unwrap()).unwrap();
    assert!(matches!(load_scene(dir.path()), Err(SceneError::NoViews { .. })));

    m.views = views;
    m.views[1].width = 30;
    std::fs::write(dir.path().join(MANIFEST_NAME), toml::to_string(&m).unwrap()).unwrap();
    let err = load_scene(dir.path()).unwrap_err();
    assert!(err.to_string().contains("view_001"), "{err}");
    m.views[1].width = 24;

    m.views[2].camera_to_world[0] = 2.0;
    std::fs::write(dir.path().join(MANIFEST_NAME), toml::to_string(&m).unwrap()).unwrap();
    let err = load_scene(dir.path()).unwrap_err();
    assert!(err.to_string().contains("views[2].camera_to_world"), "{err}");

    std::fs::write(dir.path().join(MANIFEST_NAME), "version = 1\nbogus = 3\n").unwrap();
    assert!(matches!(load_scene(dir.path()), Err(SceneError::Parse { .. })));
    assert!(!manifest_text(dir.path()).is_empty());
}

#[test]
fn marching_cubes_sphere_is_accurate_and_watertight() {
    let sphere = crate::fields::AnalyticShape::sphere(0.5);
    let grid = GridSpec::cube(1.0, 64);
    let mesh = marching_cubes(&sphere, &grid).unwrap();
    assert!(!mesh.is_empty());
    let diag = grid.cell_size().norm();
    assert!((diag - 0.054).abs() < 1e-3);
    for v in &mesh.vertices {
        assert!((v.norm() - 0.5).abs() < diag);
    }
    assert!(mesh.is_watertight());
    assert!(mesh.indices_valid());
    let vol = mesh.signed_volume();
    let exact = 4.0 / 3.0 * std::f64::consts::PI * 0.125;
    assert!((vol - exact).abs() / exact < 0.01, "{vol} vs {exact}");
}

#[test]
fn marching_cubes_without_crossing_is_empty() {
    let far = crate::fields::AnalyticShape::Sphere {
        center: Vec3::new(5.0, 0.0, 0.0),
        radius: 0.5,
    };
    let mesh = marching_cubes(&far, &GridSpec::cube(1.0, 8)).unwrap();
    assert!(mesh.is_empty());
    assert!(marching_cubes(&far, &GridSpec::cube(1.0, 1)).is_err());
}

#[test]
fn obj_round_trip() {
    let sphere = crate::fields::AnalyticShape::sphere(0.5);
    let mesh = marching_cubes(&sphere, &GridSpec::cube(1.0, 12)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.obj");
    write_obj(&mesh, &p).unwrap();
    let back = parse_obj(&p).unwrap();
    assert_eq!(back.triangles, mesh.triangles);
    for (a, b) in mesh.vertices.iter().zip(&back.vertices) {
        assert!((*a - *b).norm() < 1e-6);
    }
    let empty = dir.path().join("e.obj");
    write_obj(&TriangleMesh::default(), &empty).unwrap();
    assert!(parse_obj(&empty).unwrap().is_empty());
}

#[test]
fn chamfer_examples() {
    let o = Vec3::zero();
    let e1 = Vec3::new(1.0, 0.0, 0.0);
    assert_eq!(chamfer(&[o, e1], &[o, e1]).unwrap(), 0.0);
    assert_eq!(chamfer(&[o], &[e1]).unwrap(), 1.0);
    assert_eq!(chamfer(&[o, e1], &[o]).unwrap(), 0.25);
    assert!(chamfer(&[], &[o]).is_err());
}

#[test]
fn psnr_examples() {
    let a = crate::raster::RgbImage::filled(4, 4, [0.2; 3]);
    let b = crate::raster::RgbImage::filled(4, 4, [0.3; 3]);
    assert_eq!(psnr(&a, &a, 1.0).unwrap(), PSNR_CAP);
    assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-9);
    let c = crate::raster::RgbImage::filled(3, 4, [0.2; 3]);
    assert!(psnr(&a, &c, 1.0).is_err());
}

#[test]
fn mesh_samples_lie_on_the_mesh_sphere() {
    let sphere = crate::fields::AnalyticShape::sphere(0.5);
    let mesh = marching_cubes(&sphere, &GridSpec::cube(1.0, 48)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pts = sample_mesh_surface(&mesh, 4000, &mut rng).unwrap();
    let gt = sphere.sample_surface(4000, &mut rng);
    let d = chamfer(&pts, &gt).unwrap();
    assert!(d < 0.02, "{d}");
}

#[test]
fn volume_rendered_oracle_matches_synthetic_images() {
    let cfg = small_synth();
    let scene = synth_scene(&cfg).unwrap();
    let view = &scene.views[0];
    let cam = &view.camera;
    let (w, h) = (cam.width(), cam.height());
    let rays: Vec<Ray<f64>> = (0..w * h)
        .map(|i| crate::geometry::pixel_center_ray(cam, i % w, i / w))
        .collect();
    let samples: Vec<_> = rays
        .iter()
        .map(|r| {
            let (n, f) = crate::render::ray_interval(r, 1.0);
            stratified_samples::<f64, ChaCha8Rng>(n, f, 128, None).unwrap()
        })
        .collect();
    let field = AnalyticField {
        shape: cfg.shape,
        color: cfg.oracle(),
    };
    let vc = VolumeConfig {
        density: DensityKind::Logistic,
        beta: 0.002,
        background: [0.0; 3],
    };
    let mut g = crate::Graph::new();
    let out = render_rays(&mut g, &field, &rays, &samples, &vc).unwrap();
    let col = g.value(out.color).data().to_vec();
    let err: f64 = col
        .chunks(3)
        .zip(view.image.pixels())
        .flat_map(|(c, p)| (0..3).map(move |k| (c[k] - p[k]).abs()))
        .sum::<f64>()
        / (3 * w * h) as f64;
    assert!(err < 0.02, "mean abs error {err}");
}

proptest! {
    #[test]
    fn kdtree_matches_brute_force(
        pts in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0), 1..200),
        q in (-2.0f64..2.0, -2.0f64..2.0, -2.0f64..2.0),
    ) {
        let pts: Vec<Vec3<f64>> = pts.into_iter().map(|(x, y, z)| Vec3::new(x, y, z)).collect();
        let q = Vec3::new(q.0, q.1, q.2);
        let tree = KdTree::new(&pts);
        let brute = pts.iter().map(|p| (*p - q).norm()).fold(f64::INFINITY, f64::min);
        prop_assert!((tree.nearest_distance(q) - brute).abs() < 1e-12);
    }

    #[test]
    fn chamfer_is_symmetric_and_nonnegative(
        a in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0), 1..60),
        b in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0), 1..60),
    ) {
        let a: Vec<Vec3<f64>> = a.into_iter().map(|(x, y, z)| Vec3::new(x, y, z)).collect();
        let b: Vec<Vec3<f64>> = b.into_iter().map(|(x, y, z)| Vec3::new(x, y, z)).collect();
        let ab = chamfer(&a, &b).unwrap();
        prop_assert_eq!(ab, chamfer(&b, &a).unwrap());
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(chamfer(&a, &a).unwrap(), 0.0);
    }
}
