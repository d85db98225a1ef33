//! Reconstruction and rendering metrics.

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kdtree::KdTree;
use super::mesh::TriangleMesh;
use super::SceneError;
use crate::math::Vec3;
use crate::raster::RgbImage;

/// Reported PSNR for identical images.
pub const PSNR_CAP: f64 = 99.0;

fn mean_nearest(from: &[Vec3<f64>], to: &KdTree) -> f64 {
    let d: Vec<f64> = from.par_iter().map(|&p| to.nearest_distance(p)).collect();
    d.iter().sum::<f64>() / d.len() as f64
}

/// Symmetric mean nearest-neighbor distance.
pub fn chamfer(a: &[Vec3<f64>], b: &[Vec3<f64>]) -> Result<f64, SceneError> {
    if a.is_empty() || b.is_empty() {
        return Err(SceneError::Invalid(format!(
            "chamfer needs two non-empty point sets (got {} and {})",
            a.len(),
            b.len()
        )));
    }
    let ta = KdTree::new(a);
    let tb = KdTree::new(b);
    Ok(0.5 * (mean_nearest(a, &tb) + mean_nearest(b, &ta)))
}

/// Area-weighted uniform samples on the mesh surface.
pub fn sample_mesh_surface<R: Rng + ?Sized>(
    mesh: &TriangleMesh,
    n: usize,
    rng: &mut R,
) -> Result<Vec<Vec3<f64>>, SceneError> {
    let areas: Vec<f64> = (0..mesh.triangles.len()).map(|t| mesh.triangle_area(t)).collect();
    let dist = WeightedIndex::new(&areas)
        .map_err(|e| SceneError::Invalid(format!("cannot sample mesh surface: {e}")))?;
    Ok((0..n)
        .map(|_| {
            let [a, b, c] = mesh.triangles[dist.sample(rng)].map(|i| mesh.vertices[i]);
            let (mut u, mut v): (f64, f64) = (rng.random(), rng.random());
            if u + v > 1.0 {
                u = 1.0 - u;
                v = 1.0 - v;
            }
            a + (b - a) * u + (c - a) * v
        })
        .collect())
}

/// `10·log10(peak² / MSE)` over all pixels and channels, capped at [`PSNR_CAP`].
pub fn psnr(a: &RgbImage<f64>, b: &RgbImage<f64>, peak: f64) -> Result<f64, SceneError> {
    if (a.width(), a.height()) != (b.width(), b.height()) {
        return Err(SceneError::Invalid(format!(
            "psnr: image sizes differ ({}x{} vs {}x{})",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    let se: f64 = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .flat_map(|(p, q)| (0..3).map(move |k| (p[k] - q[k]).powi(2)))
        .sum();
    let mse = se / (3 * a.pixels().len()).max(1) as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewPsnr {
    pub view: String,
    pub psnr: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Plain symmetric Chamfer in world units ("desk-scale Chamfer").
    pub chamfer: Option<f64>,
    pub chamfer_kind: String,
    pub chamfer_points: usize,
    pub psnr: Vec<ViewPsnr>,
    pub mean_psnr: Option<f64>,
    pub config_hash: String,
    pub mesh_vertices: usize,
    pub mesh_triangles: usize,
    /// Seconds per phase.
    pub timings: BTreeMap<String, f64>,
}

impl EvalReport {
    pub fn new(config_hash: String) -> Self {
        Self {
            chamfer_kind: "desk-scale Chamfer".into(),
            config_hash,
            ..Self::default()
        }
    }

    pub fn set_psnr(&mut self, per_view: Vec<ViewPsnr>) {
        self.mean_psnr = (!per_view.is_empty())
            .then(|| per_view.iter().map(|v| v.psnr).sum::<f64>() / per_view.len() as f64);
        self.psnr = per_view;
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
