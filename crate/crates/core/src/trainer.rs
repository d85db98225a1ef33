//! Optimization loop, schedules, checkpoints and inference helpers.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{AutodiffError, Graph, Tensor, Var};
use crate::fields::{points_tensor, BoundParams, FieldConfig, FieldParams, SdfField};
use crate::geometry::{
    build_bundles, bundle_size_schedule, distance_mask, pixel_center_ray, BundleSchedule, Camera,
    DistanceMask, GeometryError, PatchSize, Ray, RayBundle,
};
use crate::losses::{
    color_loss, conv_loss, eikonal_loss, mask_loss, mean_loss, total_loss, variance_loss,
    ConvKernel, LossBreakdown, LossOptions, LossTerms, LossWeights,
};
use crate::math::Vec3;
use crate::raster::RgbImage;
use crate::render::{
    central_dense_sampling, guided_samples, render_rays, surface_render, DensityKind,
    GuidedSampling, NeuralField, RenderError, SampleSet, TraceConfig, VolumeConfig,
};
use crate::scene::SceneDataset;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("dataset: {0}")]
    Data(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Graph(#[from] AutodiffError),
    #[error("non-finite loss at step {step}: c={} m={} v={} conv={} eik={} mask={} total={}",
        .losses.c, .losses.m, .losses.v, .losses.conv, .losses.eik, .losses.mask_term, .losses.total)]
    NonFinite { step: usize, losses: LossBreakdown },
    #[error("non-finite gradient at step {step}")]
    NonFiniteGradient { step: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("checkpoint {path}: {msg}")]
    Checkpoint { path: PathBuf, msg: String },
}

impl TrainError {
    pub fn is_numerical(&self) -> bool {
        matches!(self, Self::NonFinite { .. } | Self::NonFiniteGradient { .. })
    }
}

type Result<T> = std::result::Result<T, TrainError>;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RenderMode {
    #[default]
    Volume,
    Surface,
}

impl std::str::FromStr for RenderMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "volume" => Ok(Self::Volume),
            "surface" => Ok(Self::Surface),
            _ => Err(format!("unknown render mode `{s}` (expected volume or surface)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    /// Samples on each bundle's anchor ray.
    pub n_dense: usize,
    /// Samples on the other rays of a bundle.
    pub n_sparse: usize,
    /// Concentrate samples around the current surface estimate.
    /// Written as a table; `coarse = 0` turns it off.
    #[serde(with = "guided_serde")]
    pub guided: Option<GuidedSampling>,
}

mod field_serde {
    use serde::de::Error;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::fields::FieldConfig;

    pub fn serialize<S: Serializer>(f: &FieldConfig, s: S) -> Result<S::Ok, S::Error> {
        f.serialize(s)
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Preset(String),
        Table(FieldConfig),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<FieldConfig, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Table(f) => Ok(f),
            Repr::Preset(name) => FieldConfig::preset(&name)
                .ok_or_else(|| D::Error::custom(format!("unknown field preset `{name}` (expected full, desk or tiny)"))),
        }
    }
}

mod guided_serde {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::render::GuidedSampling;

    pub fn serialize<S: Serializer>(g: &Option<GuidedSampling>, s: S) -> Result<S::Ok, S::Error> {
        g.unwrap_or(GuidedSampling {
            coarse: 0,
            ..GuidedSampling::default()
        })
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<GuidedSampling>, D::Error> {
        let g = GuidedSampling::deserialize(d)?;
        Ok((g.coarse > 0).then_some(g))
    }
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            n_dense: 64,
            n_sparse: 16,
            guided: Some(GuidedSampling::default()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Passes over the training views; one view per step.
    pub epochs: usize,
    /// Total steps, overriding `epochs` when set.
    pub iterations: Option<usize>,
    /// Bundles per step.
    pub bundles: usize,
    pub patch: BundleSchedule,
    /// Fixed rectangular patch, overriding `patch`.
    pub patch_rect: Option<PatchSize>,
    pub lr: f64,
    /// Learning-rate ratio reached at the final step.
    pub lr_decay: f64,
    pub sampling: SamplingConfig,
    pub density: DensityKind,
    pub beta_start: f64,
    pub beta_end: f64,
    /// Fraction of the run over which `beta` is annealed.
    pub anneal_fraction: f64,
    pub weights: LossWeights,
    pub loss: LossOptions,
    /// Distance-mask threshold in unit-frame units.
    pub mask_tau: f64,
    /// Uniform points in the unit ball added to the eikonal term.
    pub eikonal_points: usize,
    pub seed: u64,
    pub render_mode: RenderMode,
    /// Add the foreground-mask term (weighted by `weights.mask`).
    pub use_mask: bool,
    /// A table, or a preset name (`"full"`, `"desk"`, `"tiny"`).
    #[serde(with = "field_serde")]
    pub field: FieldConfig,
    pub background: [f64; 3],
    /// Steps between periodic checkpoints; 0 keeps only the final one.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            iterations: None,
            bundles: 229,
            patch: BundleSchedule::default(),
            patch_rect: None,
            lr: 5e-4,
            lr_decay: 0.1,
            sampling: SamplingConfig::default(),
            density: DensityKind::Laplace,
            beta_start: 0.1,
            beta_end: 0.01,
            anneal_fraction: 0.8,
            weights: LossWeights::default(),
            loss: LossOptions::default(),
            mask_tau: 0.05,
            eikonal_points: 0,
            seed: 0,
            render_mode: RenderMode::Volume,
            use_mask: false,
            field: FieldConfig::default(),
            background: [0.0; 3],
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.bundles == 0 {
            return bad("bundles must be at least 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad(format!("lr_decay must lie in (0, 1], got {}", self.lr_decay));
        }
        if !(self.beta_start > 0.0 && self.beta_end > 0.0) {
            return bad("beta_start and beta_end must be positive".into());
        }
        if !(self.anneal_fraction > 0.0 && self.anneal_fraction <= 1.0) {
            return bad("anneal_fraction must lie in (0, 1]".into());
        }
        let s = &self.sampling;
        if s.n_sparse < 2 || s.n_dense < s.n_sparse {
            return bad(format!(
                "sampling needs n_dense >= n_sparse >= 2 (got {} and {})",
                s.n_dense, s.n_sparse
            ));
        }
        if !(self.mask_tau > 0.0) {
            return bad("mask_tau must be positive".into());
        }
        if let Some(p) = self.patch_rect {
            if p.rows == 0 || p.cols == 0 {
                return bad(format!("patch_rect {p} must be non-empty"));
            }
        } else {
            bundle_size_schedule(0, &self.patch)?;
        }
        self.weights.validate().map_err(TrainError::Config)?;
        self.field.validate().map_err(TrainError::Config)?;
        Ok(())
    }

    pub fn total_steps(&self, n_views: usize) -> usize {
        self.iterations.unwrap_or(self.epochs * n_views)
    }

    pub fn patch_at(&self, epoch: usize) -> Result<PatchSize> {
        Ok(match self.patch_rect {
            Some(p) => p,
            None => PatchSize::square(bundle_size_schedule(epoch, &self.patch)?),
        })
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex(&Sha256::digest(json.as_bytes()))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Exponential decay from `lr` at step 0 to `lr·lr_decay` at the final step.
pub fn lr_schedule(step: usize, total_steps: usize, cfg: &TrainConfig) -> f64 {
    if total_steps <= 1 {
        return cfg.lr;
    }
    let frac = (step as f64 / (total_steps - 1) as f64).min(1.0);
    cfg.lr * cfg.lr_decay.powf(frac)
}

/// Log-linear anneal from `beta_start` to `beta_end` over the first
/// `anneal_fraction` of the run, constant afterwards.
pub fn beta_schedule(step: usize, total_steps: usize, cfg: &TrainConfig) -> f64 {
    let span = cfg.anneal_fraction * total_steps.saturating_sub(1) as f64;
    let frac = if span <= 0.0 {
        1.0
    } else {
        (step as f64 / span).min(1.0)
    };
    (cfg.beta_start.ln() + (cfg.beta_end.ln() - cfg.beta_start.ln()) * frac).exp()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<Tensor<f64>>,
    pub v: Vec<Tensor<f64>>,
    pub t: u64,
}

impl OptimizerState {
    pub fn new(params: &FieldParams<f64>) -> Self {
        let zeros: Vec<Tensor<f64>> = params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    /// One bias-corrected adaptive-moment update.
    pub fn step(&mut self, params: &mut FieldParams<f64>, grads: &[Option<Tensor<f64>>], lr: f64, cfg: &AdamConfig) {
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        for (((p, m), v), g) in params
            .tensors_mut()
            .into_iter()
            .zip(&mut self.m)
            .zip(&mut self.v)
            .zip(grads)
        {
            let Some(g) = g else { continue };
            let (p, m, v) = (p.data_mut(), m.data_mut(), v.data_mut());
            for i in 0..p.len() {
                let gi = g.data()[i];
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p[i] -= lr * mh / (vh.sqrt() + cfg.eps);
            }
        }
    }
}

/// Everything needed to continue a run bit-identically.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub params: FieldParams<f64>,
    pub optimizer: OptimizerState,
    pub step: usize,
    pub rng: ChaCha8Rng,
}

impl TrainState {
    pub fn new(cfg: &TrainConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let params = FieldParams::new(cfg.field, &mut rng);
        let optimizer = OptimizerState::new(&params);
        Self {
            params,
            optimizer,
            step: 0,
            rng,
        }
    }
}

/// Rays, samples and targets of one step.
#[derive(Clone, Debug)]
pub struct Batch {
    pub view: usize,
    pub size: PatchSize,
    pub bundles: Vec<RayBundle<f64>>,
    pub samples: Vec<SampleSet<f64>>,
    /// Extra eikonal points.
    pub eikonal_points: Vec<Vec3<f64>>,
    /// Per-ray foreground flags, when the mask term is active.
    pub foreground: Option<Vec<bool>>,
    pub beta: f64,
}

impl Batch {
    pub fn rays(&self) -> Vec<Ray<f64>> {
        self.bundles.iter().flat_map(|b| b.rays.iter().copied()).collect()
    }

    pub fn sample_count(&self) -> usize {
        self.samples.iter().map(|s| s.len()).sum()
    }
}

fn check_dataset(dataset: &SceneDataset) -> Result<Vec<usize>> {
    let train = dataset.train_views();
    if train.is_empty() {
        return Err(TrainError::Data("dataset has no training views".into()));
    }
    Ok(train)
}

fn uniform_ball<R: Rng + ?Sized>(rng: &mut R) -> Vec3<f64> {
    loop {
        let p = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        if p.dot(p) <= 1.0 {
            return p;
        }
    }
}

/// Draws the view, bundles and samples of step `step`.
pub fn prepare_batch(
    params: &FieldParams<f64>,
    dataset: &SceneDataset,
    cfg: &TrainConfig,
    step: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Batch> {
    let train = check_dataset(dataset)?;
    let total = cfg.total_steps(train.len());
    let epoch = step / train.len();
    let view = train[rng.random_range(0..train.len())];
    let v = &dataset.views[view];
    let size = cfg.patch_at(epoch)?;
    let beta = beta_schedule(step, total, cfg);
    let bundles = build_bundles(&v.camera, &v.image, view, cfg.bundles, size, rng, None)?;
    let s = &cfg.sampling;
    let samples = match s.guided {
        Some(guided) => {
            let rays: Vec<Ray<f64>> = bundles.iter().flat_map(|b| b.rays.iter().copied()).collect();
            let anchor = size.anchor_index();
            let counts: Vec<usize> = bundles
                .iter()
                .flat_map(|b| (0..b.len()).map(move |i| if i == anchor { s.n_dense } else { s.n_sparse }))
                .collect();
            guided_samples(params, &rays, &counts, 1.0, beta, &guided, rng)?
        }
        None => {
            let mut all = Vec::new();
            for b in &bundles {
                all.extend(central_dense_sampling(b, s.n_dense, s.n_sparse, 1.0, Some(&mut *rng))?);
            }
            all
        }
    };
    let eikonal_points = (0..cfg.eikonal_points).map(|_| uniform_ball(rng)).collect();
    let foreground = match (&v.mask, cfg.use_mask && cfg.weights.mask > 0.0) {
        (Some(m), true) => Some(
            bundles
                .iter()
                .flat_map(|b| b.pixels.iter().map(|&(c, r)| m.get(c, r)))
                .collect(),
        ),
        (None, true) => {
            return Err(TrainError::Data(format!(
                "view `{}` has no mask but use_mask is set",
                v.name
            )))
        }
        _ => None,
    };
    Ok(Batch {
        view,
        size,
        bundles,
        samples,
        eikonal_points,
        foreground,
        beta,
    })
}

/// Loss graph of a prepared batch.
pub struct BatchLoss {
    pub total: Var,
    pub breakdown: LossBreakdown,
    pub bound: BoundParams,
}

/// Builds the full render-and-loss graph for `batch` on `g`.
pub fn batch_loss(
    g: &mut Graph<f64>,
    params: &FieldParams<f64>,
    batch: &Batch,
    cfg: &TrainConfig,
) -> Result<BatchLoss> {
    let bound = params.bind(g, true);
    let field = NeuralField { params: &bound };
    let rays = batch.rays();
    let n = batch.bundles.len();
    let p = batch.size.pixel_count();
    let (color, points, gradient, t_final) = match cfg.render_mode {
        RenderMode::Volume => {
            let vc = VolumeConfig {
                density: cfg.density,
                beta: batch.beta,
                background: cfg.background,
            };
            let out = render_rays(g, &field, &rays, &batch.samples, &vc)?;
            let depth = g.value(out.depth).data().to_vec();
            let points: Vec<Vec3<f64>> = rays.iter().zip(&depth).map(|(r, &d)| r.at(d)).collect();
            (out.color, points, out.gradients, Some(out.t_final))
        }
        RenderMode::Surface => {
            let tc = TraceConfig {
                background: cfg.background,
                ..TraceConfig::default()
            };
            let out = surface_render(g, &field, params, &rays, &tc)?;
            let points = rays
                .iter()
                .zip(&out.hits)
                .map(|(r, h)| if h.hit { r.at(h.t) } else { r.at(1e3) })
                .collect();
            let gradient = match out.points {
                Some(x) => Some(crate::render::RadianceField::geometry(&field, g, x)?.gradient),
                None => None,
            };
            let t_final = match &batch.foreground {
                Some(_) => Some(surface_soft_transmittance(g, &field, params, &rays, batch.beta)?),
                None => None,
            };
            let gradient = match gradient {
                Some(v) => v,
                None => g.constant(Tensor::zeros(&[0, 3])),
            };
            (out.color, points, gradient, t_final)
        }
    };
    let truth_data: Vec<f64> = batch
        .bundles
        .iter()
        .flat_map(|b| b.true_colors.iter().flatten().copied())
        .collect();
    let truth = g.constant(Tensor::new(vec![n, p, 3], truth_data)?);
    let rendered = g.reshape(color, &[n, p, 3])?;
    let mut terms = LossTerms {
        color: Some(color_loss(g, rendered, truth)?),
        mean: Some(mean_loss(g, rendered, truth, &cfg.loss)?),
        variance: Some(variance_loss(g, rendered, truth, &cfg.loss)?),
        ..LossTerms::default()
    };
    if batch.size.rows >= 3 && batch.size.cols >= 3 {
        let masks = points
            .chunks(p)
            .map(|pts| distance_mask(pts, batch.size.rows, batch.size.cols, cfg.mask_tau))
            .collect::<std::result::Result<Vec<DistanceMask>, _>>()?;
        let kernel = ConvKernel::new(cfg.loss.kernel);
        terms.conv = conv_loss(g, rendered, truth, &masks, batch.size, &kernel)?;
    }
    let eik_grad = if batch.eikonal_points.is_empty() {
        gradient
    } else {
        let x = g.constant(points_tensor(&batch.eikonal_points));
        let extra = crate::render::RadianceField::geometry(&field, g, x)?.gradient;
        if g.shape(gradient)[0] == 0 {
            extra
        } else {
            g.concat(&[gradient, extra], 0)?
        }
    };
    if g.shape(eik_grad)[0] > 0 {
        terms.eikonal = Some(eikonal_loss(g, eik_grad)?);
    }
    if let (Some(fg), Some(tf)) = (&batch.foreground, t_final) {
        terms.mask = Some(mask_loss(g, tf, fg)?);
    }
    let (total, breakdown) = total_loss(g, &terms, &cfg.weights)?;
    Ok(BatchLoss {
        total,
        breakdown,
        bound,
    })
}

/// `sigmoid(min_t f / beta)` per ray, the surface-mode stand-in for `T_final`.
fn surface_soft_transmittance(
    g: &mut Graph<f64>,
    field: &NeuralField<'_>,
    params: &FieldParams<f64>,
    rays: &[Ray<f64>],
    beta: f64,
) -> Result<Var> {
    const MARCH: usize = 32;
    let mut pts = Vec::with_capacity(rays.len() * MARCH);
    let mut ts = Vec::with_capacity(rays.len() * MARCH);
    for r in rays {
        let (near, far) = crate::render::ray_interval(r, 1.0);
        for k in 0..MARCH {
            let t = near + (far - near) * k as f64 / (MARCH - 1) as f64;
            ts.push(t);
            pts.push(r.at(t));
        }
    }
    let sdf = params.sdf_batch(&pts);
    let argmin: Vec<Vec3<f64>> = sdf
        .chunks(MARCH)
        .zip(pts.chunks(MARCH))
        .map(|(s, p)| {
            let mut best = 0;
            for i in 1..s.len() {
                if s[i] < s[best] {
                    best = i;
                }
            }
            p[best]
        })
        .collect();
    let x = g.constant(points_tensor(&argmin));
    let geo = crate::render::RadianceField::geometry(field, g, x)?;
    let z = g.scale(geo.sdf, 1.0 / beta)?;
    Ok(g.sigmoid(z)?)
}

/// One optimization step; returns the logged losses.
pub fn train_step(
    state: &mut TrainState,
    dataset: &SceneDataset,
    cfg: &TrainConfig,
) -> Result<StepRecord> {
    let start = Instant::now();
    let train = check_dataset(dataset)?;
    let total = cfg.total_steps(train.len());
    let step = state.step;
    let batch = prepare_batch(&state.params, dataset, cfg, step, &mut state.rng)?;
    let mut g = Graph::new();
    let loss = batch_loss(&mut g, &state.params, &batch, cfg)?;
    if !loss.breakdown.is_finite() {
        return Err(TrainError::NonFinite {
            step,
            losses: loss.breakdown,
        });
    }
    let grads = g.backward(loss.total)?;
    let grads: Vec<Option<Tensor<f64>>> = loss.bound.vars().iter().map(|&v| grads.wrt(v).cloned()).collect();
    if grads.iter().flatten().any(|t| !t.is_finite()) {
        return Err(TrainError::NonFiniteGradient { step });
    }
    let lr = lr_schedule(step, total, cfg);
    state.optimizer.step(&mut state.params, &grads, lr, &AdamConfig::default());
    state.step += 1;
    Ok(StepRecord {
        step,
        epoch: step / train.len(),
        view: batch.view,
        patch: batch.size.to_string(),
        rays: batch.bundles.iter().map(|b| b.len()).sum(),
        samples: batch.sample_count(),
        lr,
        beta: batch.beta,
        loss: loss.breakdown,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

/// Tape and gradient sizes of one step, without updating parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepFootprint {
    pub rays: usize,
    pub samples: usize,
    pub nodes: usize,
    pub tape_bytes: usize,
    pub gradient_bytes: usize,
}

pub fn measure_step(
    params: &FieldParams<f64>,
    dataset: &SceneDataset,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<StepFootprint> {
    check_dataset(dataset)?;
    let batch = prepare_batch(params, dataset, cfg, 0, rng)?;
    let mut g = Graph::new();
    let loss = batch_loss(&mut g, params, &batch, cfg)?;
    let grads = g.backward(loss.total)?;
    Ok(StepFootprint {
        rays: batch.bundles.iter().map(|b| b.len()).sum(),
        samples: batch.sample_count(),
        nodes: g.len(),
        tape_bytes: g.value_bytes(),
        gradient_bytes: grads.bytes(),
    })
}

/// One line of the NDJSON training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub view: usize,
    pub patch: String,
    pub rays: usize,
    pub samples: usize,
    pub lr: f64,
    pub beta: f64,
    pub loss: LossBreakdown,
    pub wall_ms: f64,
}

#[derive(Default)]
pub struct RunOptions<'a> {
    pub log: Option<&'a mut dyn Write>,
    /// Directory for `step_XXXXXXX.ckpt` and `latest.ckpt`.
    pub checkpoint_dir: Option<PathBuf>,
    /// Stop after this many completed steps (checkpointing first).
    pub stop_after: Option<usize>,
    /// Called after every step.
    pub on_step: Option<&'a mut dyn FnMut(&StepRecord)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub steps_run: usize,
    pub final_step: usize,
    pub total_steps: usize,
    pub last: Option<StepRecord>,
    pub latest_checkpoint: Option<PathBuf>,
}

/// Runs from `state.step` to the end of the schedule (or `stop_after`).
pub fn train(
    state: &mut TrainState,
    dataset: &SceneDataset,
    cfg: &TrainConfig,
    mut opts: RunOptions<'_>,
) -> Result<RunSummary> {
    cfg.validate()?;
    let train_views = check_dataset(dataset)?;
    let total = cfg.total_steps(train_views.len());
    let end = opts.stop_after.map_or(total, |s| s.min(total));
    let hash = cfg.hash();
    let mut last = None;
    let mut steps_run = 0;
    let mut latest = None;
    if let Some(dir) = &opts.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|source| TrainError::Io {
            path: dir.clone(),
            source,
        })?;
    }
    while state.step < end {
        let rec = train_step(state, dataset, cfg)?;
        if let Some(log) = opts.log.as_mut() {
            let line = serde_json::to_string(&rec).expect("record serializes");
            writeln!(log, "{line}").map_err(|source| TrainError::Io {
                path: PathBuf::from("<log>"),
                source,
            })?;
        }
        if let Some(f) = opts.on_step.as_mut() {
            f(&rec);
        }
        steps_run += 1;
        last = Some(rec);
        if let Some(dir) = &opts.checkpoint_dir {
            if cfg.checkpoint_every > 0 && state.step % cfg.checkpoint_every == 0 && state.step < end {
                save_checkpoint(state, cfg, &hash, &dir.join(format!("step_{:07}.ckpt", state.step)))?;
            }
        }
    }
    if let Some(dir) = &opts.checkpoint_dir {
        let p = dir.join("latest.ckpt");
        save_checkpoint(state, cfg, &hash, &p)?;
        latest = Some(p);
    }
    if let Some(log) = opts.log.as_mut() {
        let _ = log.flush();
    }
    Ok(RunSummary {
        steps_run,
        final_step: state.step,
        total_steps: total,
        last,
        latest_checkpoint: latest,
    })
}

const MAGIC: &[u8; 8] = b"RBCKPT\r\n";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Loaded checkpoint contents.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub state: TrainState,
    pub config: TrainConfig,
    pub config_hash: String,
}

fn put_tensor(buf: &mut Vec<u8>, t: &Tensor<f64>) {
    buf.extend((t.shape().len() as u32).to_le_bytes());
    for &d in t.shape() {
        buf.extend((d as u64).to_le_bytes());
    }
    for &v in t.data() {
        buf.extend(v.to_bits().to_le_bytes());
    }
}

/// Binary checkpoint: magic, version, config hash, resolved config,
/// step, RNG state, parameter and moment tensors, SHA-256 trailer.
pub fn checkpoint_bytes(state: &TrainState, cfg: &TrainConfig, hash: &str) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend(MAGIC);
    buf.extend(CHECKPOINT_VERSION.to_le_bytes());
    let hb = hash.as_bytes();
    buf.extend((hb.len() as u32).to_le_bytes());
    buf.extend(hb);
    let cj = serde_json::to_vec(cfg).expect("config serializes");
    buf.extend((cj.len() as u64).to_le_bytes());
    buf.extend(&cj);
    buf.extend((state.step as u64).to_le_bytes());
    buf.extend(state.rng.get_seed());
    buf.extend(state.rng.get_stream().to_le_bytes());
    buf.extend(state.rng.get_word_pos().to_le_bytes());
    buf.extend(state.optimizer.t.to_le_bytes());
    let params = state.params.tensors();
    buf.extend((params.len() as u32).to_le_bytes());
    for t in params {
        put_tensor(&mut buf, t);
    }
    for t in state.optimizer.m.iter().chain(&state.optimizer.v) {
        put_tensor(&mut buf, t);
    }
    let digest = Sha256::digest(&buf);
    buf.extend(digest.as_slice());
    buf
}

pub fn save_checkpoint(state: &TrainState, cfg: &TrainConfig, hash: &str, path: &Path) -> Result<()> {
    let bytes = checkpoint_bytes(state, cfg, hash);
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, &bytes)
        .and_then(|_| std::fs::rename(&tmp, path))
        .map_err(|source| TrainError::Io {
            path: path.to_path_buf(),
            source,
        })
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        if self.pos + n > self.buf.len() {
            return Err("truncated file".into());
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn tensor(&mut self) -> std::result::Result<Tensor<f64>, String> {
        let rank = self.u32()? as usize;
        if rank > 8 {
            return Err(format!("implausible tensor rank {rank}"));
        }
        let shape: Vec<usize> = (0..rank).map(|_| self.u64().map(|d| d as usize)).collect::<std::result::Result<_, _>>()?;
        let n: usize = shape.iter().product();
        let bytes = self.take(n.checked_mul(8).ok_or("tensor too large")?)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_bits(u64::from_le_bytes(c.try_into().unwrap())))
            .collect();
        Tensor::new(shape, data).map_err(|e| e.to_string())
    }
}

/// Parses a checkpoint; `expected_hash` guards against a config mismatch.
pub fn parse_checkpoint(bytes: &[u8], expected_hash: Option<&str>) -> std::result::Result<Checkpoint, String> {
    if bytes.len() < MAGIC.len() + 4 + 32 || &bytes[..MAGIC.len()] != MAGIC {
        return Err("not a checkpoint file (bad magic)".into());
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    let mut r = Reader { buf: body, pos: MAGIC.len() };
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(format!("unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"));
    }
    if Sha256::digest(body).as_slice() != digest {
        return Err("checksum mismatch (corrupt file)".into());
    }
    let hl = r.u32()? as usize;
    let hash = String::from_utf8(r.take(hl)?.to_vec()).map_err(|e| e.to_string())?;
    if let Some(want) = expected_hash {
        if want != hash {
            return Err(format!("config hash mismatch: checkpoint {hash}, expected {want}"));
        }
    }
    let cl = r.u64()? as usize;
    let config: TrainConfig = serde_json::from_slice(r.take(cl)?).map_err(|e| format!("embedded config: {e}"))?;
    let step = r.u64()? as usize;
    let seed: [u8; 32] = r.take(32)?.try_into().unwrap();
    let stream = r.u64()?;
    let word_pos = u128::from_le_bytes(r.take(16)?.try_into().unwrap());
    let t = r.u64()?;
    let count = r.u32()? as usize;
    let mut params = FieldParams::new(config.field, &mut ChaCha8Rng::seed_from_u64(0));
    if params.tensors().len() != count {
        return Err(format!("expected {} tensors, file has {count}", params.tensors().len()));
    }
    for dst in params.tensors_mut() {
        let src = r.tensor()?;
        if src.shape() != dst.shape() {
            return Err(format!("tensor shape {:?} does not match {:?}", src.shape(), dst.shape()));
        }
        *dst = src;
    }
    let mut moments = Vec::with_capacity(2 * count);
    for i in 0..2 * count {
        let m = r.tensor()?;
        if m.shape() != params.tensors()[i % count].shape() {
            return Err("moment shape mismatch".into());
        }
        moments.push(m);
    }
    if r.pos != body.len() {
        return Err("trailing bytes".into());
    }
    let v = moments.split_off(count);
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(stream);
    rng.set_word_pos(word_pos);
    Ok(Checkpoint {
        state: TrainState {
            params,
            optimizer: OptimizerState { m: moments, v, t },
            step,
            rng,
        },
        config,
        config_hash: hash,
    })
}

pub fn load_checkpoint(path: &Path, expected_hash: Option<&str>) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_checkpoint(&bytes, expected_hash).map_err(|msg| TrainError::Checkpoint {
        path: path.to_path_buf(),
        msg,
    })
}

const RENDER_CHUNK: usize = 512;

/// Renders a full view with the trained field at the final `beta`.
pub fn render_view(
    params: &FieldParams<f64>,
    camera: &Camera<f64>,
    cfg: &TrainConfig,
    mode: RenderMode,
    seed: u64,
) -> Result<RgbImage<f64>> {
    let (w, h) = (camera.width(), camera.height());
    let rays: Vec<Ray<f64>> = (0..w * h).map(|i| pixel_center_ray(camera, i % w, i / w)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pixels = Vec::with_capacity(w * h);
    for chunk in rays.chunks(RENDER_CHUNK) {
        let mut g = Graph::new();
        let bound = params.bind(&mut g, false);
        let field = NeuralField { params: &bound };
        let color = match mode {
            RenderMode::Volume => {
                let n = cfg.sampling.n_dense;
                let guided = cfg.sampling.guided.unwrap_or_default();
                let samples = guided_samples(params, chunk, &vec![n; chunk.len()], 1.0, cfg.beta_end, &guided, &mut rng)?;
                let vc = VolumeConfig {
                    density: cfg.density,
                    beta: cfg.beta_end,
                    background: cfg.background,
                };
                render_rays(&mut g, &field, chunk, &samples, &vc)?.color
            }
            RenderMode::Surface => {
                let tc = TraceConfig {
                    background: cfg.background,
                    ..TraceConfig::default()
                };
                surface_render(&mut g, &field, params, chunk, &tc)?.color
            }
        };
        pixels.extend(g.value(color).data().chunks(3).map(|c| [c[0], c[1], c[2]]));
    }
    Ok(RgbImage::from_pixels(w, h, pixels).expect("one pixel per ray"))
}

#[cfg(test)]
mod tests;
