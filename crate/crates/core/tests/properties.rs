use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use raybundle::autodiff::{Graph, Tensor, Var};
use raybundle::fields::{
    color_eval, positional_encode, sdf_eval, AnalyticShape, EncodingConfig, FieldConfig,
    FieldParams, SdfField,
};
use raybundle::geometry::{
    build_bundles, distance_mask, pixel_to_ray, sample_pixels, PatchSize, Ray,
};
use raybundle::losses::{
    color_loss, conv_loss, eikonal_loss, mean_loss, variance_loss, ConvKernel, KernelKind,
    LossOptions,
};
use raybundle::math::Vec3;
use raybundle::raster::RgbImage;
use raybundle::render::{
    density, final_transmittance, ray_interval, render_rays, render_weights, sphere_trace,
    stratified_samples, transmittance, AnalyticField, ColorOracle, DensityConfig, VolumeConfig,
};
use raybundle::scene::{chamfer, look_at_camera, marching_cubes, synth_scene, GridSpec, SynthConfig};

type F = f64;

fn vec3() -> impl Strategy<Value = Vec3<F>> {
    (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn eye() -> impl Strategy<Value = Vec3<F>> {
    (vec3(), 2.0..4.0f64).prop_filter_map("nonzero", |(v, d)| {
        (v.norm() > 0.1).then(|| v.normalized() * d)
    })
}

fn colors(g: &mut Graph<F>, n: usize, p: usize, data: &[F]) -> Var {
    g.constant(Tensor::new(vec![n, p, 3], data.to_vec()).unwrap())
}

fn test_image(w: usize, h: usize) -> RgbImage<F> {
    let px = (0..w * h)
        .map(|i| [(i % w) as F / w as F, (i / w) as F / h as F, 0.5])
        .collect();
    RgbImage::from_pixels(w, h, px).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn camera_rays_have_unit_direction(e in eye(), target in vec3(), u in 0.0..31.99f64, v in 0.0..23.99f64) {
        let cam = look_at_camera(e, target * 0.3, 32, 24, 1.2);
        let ray = pixel_to_ray(&cam, u, v).unwrap();
        prop_assert!((ray.direction.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bundles_are_reproducible(seed in any::<u64>(), rows in 1usize..6, cols in 1usize..6, n in 1usize..12) {
        let cam = look_at_camera(Vec3::new(0.0, 0.0, -3.0), Vec3::zero(), 20, 16, 1.0);
        let img = test_image(20, 16);
        let size = PatchSize::new(rows, cols);
        let a = build_bundles(&cam, &img, 0, n, size, &mut ChaCha8Rng::seed_from_u64(seed), None).unwrap();
        let b = build_bundles(&cam, &img, 0, n, size, &mut ChaCha8Rng::seed_from_u64(seed), None).unwrap();
        prop_assert_eq!(&a, &b);
        for bundle in &a {
            prop_assert_eq!(bundle.len(), rows * cols);
            prop_assert!(bundle.pixels.iter().all(|&(c, r)| c < 20 && r < 16));
        }
    }

    #[test]
    fn unit_bundles_match_single_ray_sampler(seed in any::<u64>(), n in 1usize..40) {
        let cam = look_at_camera(Vec3::new(0.0, 0.0, -3.0), Vec3::zero(), 20, 16, 1.0);
        let img = test_image(20, 16);
        let bundles = build_bundles(&cam, &img, 0, n, PatchSize::square(1), &mut ChaCha8Rng::seed_from_u64(seed), None).unwrap();
        let pixels = sample_pixels(20, 16, n, &mut ChaCha8Rng::seed_from_u64(seed), None).unwrap();
        let got: Vec<_> = bundles.iter().map(|b| b.pixels[0]).collect();
        prop_assert_eq!(got, pixels);
    }

    #[test]
    fn distance_mask_commutes_with_transposition(
        rows in 3usize..7,
        cols in 3usize..7,
        tau in 0.01..0.5f64,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<Vec3<F>> = (0..rows * cols)
            .map(|_| {
                use rand::Rng;
                Vec3::new(rng.random::<F>(), rng.random::<F>(), rng.random::<F>()) * 0.3
            })
            .collect();
        let mut transposed = Vec::with_capacity(pts.len());
        for c in 0..cols {
            for r in 0..rows {
                transposed.push(pts[r * cols + c]);
            }
        }
        let m = distance_mask(&pts, rows, cols, tau).unwrap();
        let mt = distance_mask(&transposed, cols, rows, tau).unwrap();
        for r in 0..rows {
            for c in 0..cols {
                prop_assert_eq!(m.get(r, c), mt.get(c, r));
            }
        }
    }

    #[test]
    fn encoding_norm_is_bounded(x in vec3(), freqs in 0usize..10, include in any::<bool>()) {
        let cfg = EncodingConfig::new(freqs, include);
        let enc = positional_encode(&[x.x, x.y, x.z], &cfg);
        prop_assert_eq!(enc.len(), cfg.output_dim(3));
        let norm = enc.iter().map(|v| v * v).sum::<F>().sqrt();
        prop_assert!(norm <= (enc.len() as F).sqrt() + 1e-12);
    }

    #[test]
    fn weights_and_transmittance_identities(
        sigmas in prop::collection::vec(0.0..50.0f64, 1..64),
        delta in 0.001..0.1f64,
    ) {
        let deltas = vec![delta; sigmas.len()];
        let w = render_weights(&sigmas, &deltas).unwrap();
        let t = transmittance(&sigmas, &deltas).unwrap();
        let tf = final_transmittance(&sigmas, &deltas).unwrap();
        prop_assert!(w.iter().all(|&x| x >= 0.0));
        prop_assert!((w.iter().sum::<F>() + tf - 1.0).abs() < 1e-9);
        prop_assert!(t.windows(2).all(|p| p[1] <= p[0]));
        prop_assert!(tf <= *t.last().unwrap());
    }

    #[test]
    fn density_is_non_increasing_in_sdf(a in -1.0..1.0f64, b in -1.0..1.0f64, alpha in 0.1..100.0f64, beta in 1e-3..1.0f64) {
        let cfg = DensityConfig { alpha, beta };
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(density(hi, &cfg) <= density(lo, &cfg));
        prop_assert!(density(lo, &cfg) > 0.0);
    }

    #[test]
    fn sphere_trace_hits_lie_on_the_surface(e in eye(), aim in vec3(), box_shape in any::<bool>()) {
        let shape = if box_shape { AnalyticShape::cube(0.4) } else { AnalyticShape::sphere(0.5) };
        let dir = (aim * 0.5 - e).normalized();
        let ray = Ray::new(e, dir);
        let eps = 1e-5;
        let hit = sphere_trace(&ray, &shape, 0.0, 10.0, eps, 512);
        if hit.hit {
            prop_assert!(shape.sdf(ray.at(hit.t)).abs() < eps);
        }
    }

    #[test]
    fn losses_vanish_on_identical_colors_and_are_non_negative(
        data in prop::collection::vec(0.0..1.0f64, 2 * 9 * 3 * 2),
        sobel in any::<bool>(),
    ) {
        let (n, p) = (2, 9);
        let (a, b) = data.split_at(n * p * 3);
        let mut g = Graph::new();
        let r = colors(&mut g, n, p, a);
        let t = colors(&mut g, n, p, b);
        let opts = LossOptions::default();
        let masks = vec![raybundle::geometry::DistanceMask::all(3, 3, true); n];
        let kernel = ConvKernel::new(if sobel { KernelKind::Sobel } else { KernelKind::Laplace });
        let size = PatchSize::square(3);
        let same = [
            color_loss(&mut g, r, r).unwrap(),
            mean_loss(&mut g, r, r, &opts).unwrap(),
            variance_loss(&mut g, r, r, &opts).unwrap(),
            conv_loss(&mut g, r, r, &masks, size, &kernel).unwrap().unwrap(),
        ];
        for v in same {
            prop_assert_eq!(g.value(v).item(), 0.0);
        }
        let diff = [
            color_loss(&mut g, r, t).unwrap(),
            mean_loss(&mut g, r, t, &opts).unwrap(),
            variance_loss(&mut g, r, t, &opts).unwrap(),
            conv_loss(&mut g, r, t, &masks, size, &kernel).unwrap().unwrap(),
        ];
        for v in diff {
            prop_assert!(g.value(v).item() >= 0.0);
        }
        let grads = g.constant(Tensor::new(vec![6, 3], a[..18].to_vec()).unwrap());
        let e = eikonal_loss(&mut g, grads).unwrap();
        prop_assert!(g.value(e).item() >= 0.0);
    }

    #[test]
    fn variance_ignores_per_bundle_offsets(
        data in prop::collection::vec(0.0..1.0f64, 3 * 9 * 3 * 2),
        offsets in prop::collection::vec(-0.5..0.5f64, 3),
    ) {
        let (n, p) = (3, 9);
        let (a, b) = data.split_at(n * p * 3);
        let shift = |x: &[F]| -> Vec<F> {
            x.iter().enumerate().map(|(i, v)| v + offsets[i / (p * 3)]).collect()
        };
        let opts = LossOptions::default();
        let mut g = Graph::new();
        let r = colors(&mut g, n, p, a);
        let t = colors(&mut g, n, p, b);
        let rs = colors(&mut g, n, p, &shift(a));
        let ts = colors(&mut g, n, p, &shift(b));
        let base = variance_loss(&mut g, r, t, &opts).unwrap();
        let shifted = variance_loss(&mut g, rs, ts, &opts).unwrap();
        prop_assert!((g.value(base).item() - g.value(shifted).item()).abs() < 1e-12);
    }

    #[test]
    fn conv_ignores_global_offsets(
        data in prop::collection::vec(0.0..1.0f64, 2 * 35 * 3 * 2),
        offset in -0.5..0.5f64,
        sobel in any::<bool>(),
    ) {
        let (n, size) = (2, PatchSize::new(5, 7));
        let p = size.pixel_count();
        let (a, b) = data.split_at(n * p * 3);
        let shift = |x: &[F]| -> Vec<F> { x.iter().map(|v| v + offset).collect() };
        let kernel = ConvKernel::new(if sobel { KernelKind::Sobel } else { KernelKind::Laplace });
        let masks = vec![raybundle::geometry::DistanceMask::all(5, 7, true); n];
        let mut g = Graph::new();
        let r = colors(&mut g, n, p, a);
        let t = colors(&mut g, n, p, b);
        let rs = colors(&mut g, n, p, &shift(a));
        let ts = colors(&mut g, n, p, &shift(b));
        let base = conv_loss(&mut g, r, t, &masks, size, &kernel).unwrap().unwrap();
        let shifted = conv_loss(&mut g, rs, ts, &masks, size, &kernel).unwrap().unwrap();
        prop_assert!((g.value(base).item() - g.value(shifted).item()).abs() < 1e-12);
    }

    #[test]
    fn sobel_and_laplace_disagree_on_curved_patches(data in prop::collection::vec(0.0..1.0f64, 27)) {
        let masks = vec![raybundle::geometry::DistanceMask::all(3, 3, true)];
        let size = PatchSize::square(3);
        let mut g = Graph::new();
        let r = colors(&mut g, 1, 9, &data);
        let t = colors(&mut g, 1, 9, &[0.0; 27]);
        let s = conv_loss(&mut g, r, t, &masks, size, &ConvKernel::new(KernelKind::Sobel)).unwrap().unwrap();
        let l = conv_loss(&mut g, r, t, &masks, size, &ConvKernel::new(KernelKind::Laplace)).unwrap().unwrap();
        prop_assert!(g.value(s).item() != g.value(l).item());
    }

    #[test]
    fn chamfer_is_zero_exactly_on_coincident_sets(
        pts in prop::collection::vec(vec3(), 1..40),
        moved in any::<prop::sample::Index>(),
        shift in vec3(),
    ) {
        let mut reversed = pts.clone();
        reversed.reverse();
        prop_assert_eq!(chamfer(&pts, &reversed).unwrap(), 0.0);
        let i = moved.index(pts.len());
        let mut other = pts.clone();
        other[i] = other[i] + Vec3::new(3.0, 0.0, 0.0) + shift;
        prop_assert!(chamfer(&pts, &other).unwrap() > 0.0);
        prop_assert_eq!(chamfer(&pts, &other).unwrap(), chamfer(&other, &pts).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn marching_cubes_vertices_stay_within_a_cell_of_the_surface(res in 8usize..40, kind in 0usize..3) {
        let shape = match kind {
            0 => AnalyticShape::sphere(0.5),
            1 => AnalyticShape::cube(0.4),
            _ => AnalyticShape::torus(0.5, 0.2),
        };
        let grid = GridSpec::cube(1.0, res);
        let mesh = marching_cubes(&shape, &grid).unwrap();
        prop_assert!(!mesh.is_empty());
        prop_assert!(mesh.indices_valid());
        let c = grid.cell_size();
        let edge = c.x.max(c.y).max(c.z);
        let worst = mesh.vertices.iter().map(|&v| shape.sdf(v).abs()).fold(0.0, f64::max);
        prop_assert!(worst < edge, "residual {worst} vs edge {edge}");
        prop_assert!((0..mesh.triangles.len()).all(|t| mesh.triangle_area(t) > 1e-12));
    }

    #[test]
    fn field_evaluation_is_pure(seed in any::<u64>(), x in vec3(), y in vec3(), v in vec3()) {
        let params = FieldParams::<F>::new(FieldConfig::tiny(), &mut ChaCha8Rng::seed_from_u64(seed));
        let (s1, f1) = sdf_eval(&params, x);
        let _ = sdf_eval(&params, y);
        let (s2, f2) = sdf_eval(&params, x);
        prop_assert_eq!(s1, s2);
        prop_assert_eq!(&f1, &f2);
        let n = Vec3::new(0.0, 0.0, 1.0);
        let c1 = color_eval(&params, x, v, n, &f1);
        let _ = color_eval(&params, y, n, v, &f2);
        let c2 = color_eval(&params, x, v, n, &f1);
        prop_assert_eq!(c1, c2);
    }
}

#[test]
fn synthetic_scenes_are_reproducible() {
    let cfg = SynthConfig {
        train_views: 3,
        test_views: 1,
        resolution: 16,
        ground_truth_points: 100,
        seed: 11,
        ..SynthConfig::default()
    };
    assert_eq!(synth_scene(&cfg).unwrap(), synth_scene(&cfg).unwrap());
    let other = synth_scene(&SynthConfig { seed: 12, ..cfg.clone() }).unwrap();
    assert_ne!(synth_scene(&cfg).unwrap().ground_truth, other.ground_truth);
}

#[test]
fn quadrature_error_shrinks_as_samples_double() {
    let field = AnalyticField {
        shape: AnalyticShape::sphere(0.5),
        color: ColorOracle::Lambertian {
            light: Vec3::new(0.4, -0.3, 0.87),
            albedo: [0.75, 0.55, 0.35],
            ambient: 0.2,
        },
    };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let rays: Vec<Ray<F>> = (0..64)
        .map(|_| {
            use rand::Rng;
            let target = Vec3::new(rng.random_range(-0.45..0.45), rng.random_range(-0.45..0.45), 0.0);
            let origin = Vec3::new(0.0, 0.0, -3.0);
            Ray::new(origin, (target - origin).normalized())
        })
        .collect();
    let cfg = VolumeConfig::laplace(0.02);
    let render = |n: usize| -> Vec<[F; 3]> {
        let samples: Vec<_> = rays
            .iter()
            .map(|r| {
                let (near, far) = ray_interval(r, 1.0);
                stratified_samples::<F, ChaCha8Rng>(near, far, n, None).unwrap()
            })
            .collect();
        let mut g = Graph::new();
        render_rays(&mut g, &field, &rays, &samples, &cfg)
            .unwrap()
            .to_result(&g)
            .color
    };
    let reference = render(8192);
    let error = |n: usize| -> F {
        render(n)
            .iter()
            .zip(&reference)
            .map(|(a, b)| (0..3).map(|k| (a[k] - b[k]).abs()).sum::<F>())
            .sum::<F>()
    };
    let errors: Vec<F> = [16, 32, 64, 128, 256].iter().map(|&n| error(n)).collect();
    for w in errors.windows(2) {
        assert!(w[1] < w[0], "{errors:?}");
    }
}
