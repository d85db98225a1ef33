//! Analytic-SDF scenes rendered by sphere tracing.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{look_at_camera, Normalization, SceneDataset, SceneError, Split, View};
use crate::fields::AnalyticShape;
use crate::geometry::pixel_center_ray;
use crate::math::{fibonacci_sphere, Vec3};
use crate::raster::{ForegroundMask, RgbImage};
use crate::render::{sphere_trace_batch, ColorOracle, TraceConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub shape: AnalyticShape<f64>,
    pub train_views: usize,
    pub test_views: usize,
    pub resolution: usize,
    pub light: [f64; 3],
    pub albedo: [f64; 3],
    pub ambient: f64,
    pub camera_distance: f64,
    /// Focal length in units of the resolution.
    pub focal_scale: f64,
    pub ground_truth_points: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            shape: AnalyticShape::sphere(0.5),
            train_views: 16,
            test_views: 4,
            resolution: 96,
            light: [0.4, -0.3, 0.87],
            albedo: [0.75, 0.55, 0.35],
            ambient: 0.2,
            camera_distance: 3.0,
            focal_scale: 1.5,
            ground_truth_points: 10_000,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn oracle(&self) -> ColorOracle<f64> {
        ColorOracle::Lambertian {
            light: Vec3::from_array(self.light).normalized(),
            albedo: self.albedo,
            ambient: self.ambient,
        }
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |m: String| Err(SceneError::Invalid(m));
        self.shape.validate().map_err(SceneError::Invalid)?;
        let extent = self.shape.center().norm() + self.shape.bounding_radius();
        if extent >= 1.0 {
            return bad(format!("shape extends to radius {extent:.3}; it must fit inside the unit sphere"));
        }
        if self.train_views + self.test_views < 2 {
            return bad("at least 2 views are required".into());
        }
        if self.resolution < 3 {
            return bad(format!("resolution {} is too small", self.resolution));
        }
        if !(self.camera_distance > 1.0) {
            return bad("camera_distance must exceed the unit scene radius".into());
        }
        if !(self.focal_scale > 0.0) {
            return bad("focal_scale must be positive".into());
        }
        if Vec3::from_array(self.light).norm() == 0.0 {
            return bad("light direction must be non-zero".into());
        }
        Ok(())
    }
}

/// Indices of `m` held-out cameras spread through `n` Fibonacci positions.
fn test_indices(n: usize, m: usize) -> Vec<usize> {
    (0..m)
        .map(|k| (((k as f64 + 0.5) * n as f64 / m as f64).floor() as usize).min(n - 1))
        .collect()
}

pub fn render_view(cfg: &SynthConfig, camera: &crate::geometry::Camera<f64>) -> (RgbImage<f64>, ForegroundMask) {
    let (w, h) = (camera.width(), camera.height());
    let rays: Vec<_> = (0..w * h)
        .map(|i| pixel_center_ray(camera, i % w, i / w))
        .collect();
    let hits = sphere_trace_batch(&rays, &cfg.shape, &TraceConfig::default());
    let oracle = cfg.oracle();
    let mut pixels = Vec::with_capacity(w * h);
    let mut mask = Vec::with_capacity(w * h);
    for (ray, hit) in rays.iter().zip(&hits) {
        if hit.hit {
            let n = cfg.shape.analytic_gradient(ray.at(hit.t));
            pixels.push(oracle.shade(n));
        } else {
            pixels.push([0.0; 3]);
        }
        mask.push(hit.hit);
    }
    (
        RgbImage::from_pixels(w, h, pixels).expect("w*h pixels"),
        ForegroundMask::new(w, h, mask).expect("w*h pixels"),
    )
}

/// Cameras on a sphere of radius `camera_distance` looking at the origin.
pub fn synth_scene(cfg: &SynthConfig) -> Result<SceneDataset, SceneError> {
    cfg.validate()?;
    let n = cfg.train_views + cfg.test_views;
    let test = test_indices(n, cfg.test_views);
    let views = fibonacci_sphere(n)
        .into_iter()
        .enumerate()
        .map(|(i, dir)| {
            let cam = look_at_camera(
                dir * cfg.camera_distance,
                Vec3::zero(),
                cfg.resolution,
                cfg.resolution,
                cfg.focal_scale,
            );
            let (image, mask) = render_view(cfg, &cam);
            View {
                name: format!("view_{i:03}"),
                camera: cam,
                image,
                mask: Some(mask),
                split: if test.contains(&i) { Split::Test } else { Split::Train },
            }
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let ground_truth = cfg.shape.sample_surface(cfg.ground_truth_points, &mut rng);
    Ok(SceneDataset {
        views,
        normalization: Normalization::default(),
        shape: Some(cfg.shape),
        ground_truth: Some(ground_truth),
    })
}
