//! Ray sampling, SDF-to-density transforms, volume compositing, sphere
//! tracing and surface rendering.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, Graph, Tensor, Var};
use crate::fields::{
    color_forward, geometry_forward, points_tensor, AnalyticShape, BoundParams, SdfField,
};
use crate::geometry::Ray;
use crate::math::Vec3;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RenderError {
    #[error("invalid sample range: near {near} must be below far {far}")]
    Range { near: f64, far: f64 },
    #[error("need at least {min} samples per ray, got {got}")]
    TooFewSamples { min: usize, got: usize },
    #[error("length mismatch: {a} vs {b}")]
    Length { a: usize, b: usize },
    #[error("sample depths must be strictly increasing")]
    NotIncreasing,
    #[error("{0} rays but {1} sample sets")]
    RayCount(usize, usize),
    #[error("density parameters must be positive (alpha {alpha}, beta {beta})")]
    Density { alpha: f64, beta: f64 },
    #[error(transparent)]
    Graph(#[from] AutodiffError),
}

type Result<T> = std::result::Result<T, RenderError>;

/// Depths along one ray.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet<T> {
    pub t: Vec<T>,
    /// `t[i+1] - t[i]`, with a fixed cap for the last sample.
    pub deltas: Vec<T>,
}

impl<T: Scalar> SampleSet<T> {
    pub fn new(t: Vec<T>, far_cap: T) -> Result<Self> {
        if t.is_empty() {
            return Err(RenderError::TooFewSamples { min: 1, got: 0 });
        }
        if t.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(RenderError::NotIncreasing);
        }
        let mut deltas: Vec<T> = t.windows(2).map(|w| w[1] - w[0]).collect();
        deltas.push(far_cap);
        Ok(Self { t, deltas })
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn positions(&self, ray: &Ray<T>) -> Vec<Vec3<T>> {
        self.t.iter().map(|&t| ray.at(t)).collect()
    }
}

fn check_range<T: Scalar>(near: T, far: T, n: usize) -> Result<()> {
    if !(near < far) {
        return Err(RenderError::Range {
            near: near.to_f64_lossy(),
            far: far.to_f64_lossy(),
        });
    }
    if n < 2 {
        return Err(RenderError::TooFewSamples { min: 2, got: n });
    }
    Ok(())
}

fn strata<T: Scalar, R: Rng + ?Sized>(
    near: T,
    far: T,
    n: usize,
    rng: Option<&mut R>,
) -> Vec<T> {
    let step = (far - near) / T::lit(n as f64);
    match rng {
        Some(rng) => (0..n)
            .map(|i| near + step * (T::lit(i as f64) + T::lit(rng.random::<f64>())))
            .collect(),
        None => (0..n)
            .map(|i| near + step * (T::lit(i as f64) + T::lit(0.5)))
            .collect(),
    }
}

/// One sample per uniform stratum of `[near, far)`; midpoints unless `rng`
/// is given for jitter.
pub fn stratified_samples<T: Scalar, R: Rng + ?Sized>(
    near: T,
    far: T,
    n: usize,
    rng: Option<&mut R>,
) -> Result<SampleSet<T>> {
    check_range(near, far, n)?;
    let mut t = strata(near, far, n, rng);
    enforce_increasing(&mut t);
    SampleSet::new(t, (far - near) / T::lit(n as f64))
}

/// Nudges ties apart so depths are strictly increasing.
fn enforce_increasing<T: Scalar>(t: &mut [T]) {
    for i in 1..t.len() {
        if !(t[i] > t[i - 1]) {
            let bump = t[i - 1].abs().max(T::one()) * T::epsilon() * T::lit(4.0);
            t[i] = t[i - 1] + bump;
        }
    }
}

/// Laplace-CDF density parameters; `sigma = alpha * Psi_beta(-sdf)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityConfig<T> {
    pub alpha: T,
    pub beta: T,
}

impl<T: Scalar> DensityConfig<T> {
    /// `alpha = 1/beta`.
    pub fn coupled(beta: T) -> Self {
        Self {
            alpha: T::one() / beta,
            beta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha > T::zero() && self.beta > T::zero() {
            Ok(())
        } else {
            Err(RenderError::Density {
                alpha: self.alpha.to_f64_lossy(),
                beta: self.beta.to_f64_lossy(),
            })
        }
    }
}

/// Zero-mean Laplace CDF with scale `beta`.
pub fn laplace_cdf<T: Scalar>(s: T, beta: T) -> T {
    let half = T::lit(0.5);
    if s <= T::zero() {
        half * (s / beta).exp()
    } else {
        T::one() - half * (-s / beta).exp()
    }
}

pub fn density<T: Scalar>(sdf: T, cfg: &DensityConfig<T>) -> T {
    cfg.alpha * laplace_cdf(-sdf, cfg.beta)
}

fn check_lengths<T>(a: &[T], b: &[T]) -> Result<()> {
    if a.len() == b.len() {
        Ok(())
    } else {
        Err(RenderError::Length {
            a: a.len(),
            b: b.len(),
        })
    }
}

/// `T_i = exp(-Σ_{j<i} σ_j δ_j)`.
pub fn transmittance<T: Scalar>(sigmas: &[T], deltas: &[T]) -> Result<Vec<T>> {
    check_lengths(sigmas, deltas)?;
    let mut acc = T::zero();
    Ok(sigmas
        .iter()
        .zip(deltas)
        .map(|(&s, &d)| {
            let t = (-acc).exp();
            acc += s * d;
            t
        })
        .collect())
}

/// Transmittance past the last sample.
pub fn final_transmittance<T: Scalar>(sigmas: &[T], deltas: &[T]) -> Result<T> {
    check_lengths(sigmas, deltas)?;
    let tau: T = sigmas.iter().zip(deltas).map(|(&s, &d)| s * d).sum();
    Ok((-tau).exp())
}

/// `w_i = T_i (1 - exp(-σ_i δ_i))`.
pub fn render_weights<T: Scalar>(sigmas: &[T], deltas: &[T]) -> Result<Vec<T>> {
    let trans = transmittance(sigmas, deltas)?;
    Ok(trans
        .iter()
        .zip(sigmas.iter().zip(deltas))
        .map(|(&t, (&s, &d))| t * -(-(s * d)).exp_m1())
        .collect())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DensityKind {
    /// Laplace CDF of the negated SDF with `alpha = 1/beta`.
    #[default]
    Laplace,
    /// Logistic CDF opacity between section endpoints, sharpness `1/beta`.
    Logistic,
}

/// Per-segment optical depth `τ = -ln(1 - opacity)` on the graph.
///
/// `sdf`, `deltas`, `cos` are `[R, S]`; `cos` is `⟨v, ∇f⟩` and only used by
/// the logistic model.
pub fn optical_depth<T: Scalar>(
    g: &mut Graph<T>,
    kind: DensityKind,
    beta: T,
    sdf: Var,
    deltas: Var,
    cos: Var,
) -> std::result::Result<Var, AutodiffError> {
    match kind {
        DensityKind::Laplace => {
            let sign = g.value(sdf).map(|v| {
                if v > T::zero() {
                    T::one()
                } else if v < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            });
            let sign = g.constant(sign);
            let a = g.abs(sdf)?;
            let e = g.scale(a, -T::one() / beta)?;
            let e = g.exp(e)?;
            let one_minus = g.neg(e)?;
            let one_minus = g.add_scalar(one_minus, T::one())?;
            let sm = g.mul(sign, one_minus)?;
            let psi = g.scale(sm, T::lit(-0.5))?;
            let psi = g.add_scalar(psi, T::lit(0.5))?;
            let sigma = g.scale(psi, T::one() / beta)?;
            g.mul(sigma, deltas)
        }
        DensityKind::Logistic => {
            // only the approaching part of the ray contributes opacity
            let nc = g.neg(cos)?;
            let nc = g.relu(nc)?;
            let half_step = g.mul(nc, deltas)?;
            let half_step = g.scale(half_step, T::lit(0.5))?;
            let prev = g.add(sdf, half_step)?;
            let next = g.sub(sdf, half_step)?;
            let s = T::one() / beta;
            let a = g.scale(next, -s)?;
            let a = g.softplus(a)?;
            let b = g.scale(prev, -s)?;
            let b = g.softplus(b)?;
            g.sub(a, b)
        }
    }
}

/// Composited quantities for one group of equally sampled rays.
#[derive(Clone, Copy, Debug)]
pub struct Composite {
    /// `[R, 3]`
    pub color: Var,
    /// `[R]`
    pub depth: Var,
    /// `[R, S]`
    pub weights: Var,
    /// `[R]`
    pub t_final: Var,
}

/// Discrete volume compositing of per-sample colors `[R, S, 3]`.
pub fn composite<T: Scalar>(
    g: &mut Graph<T>,
    tau: Var,
    colors: Var,
    t: Var,
    background: [T; 3],
) -> std::result::Result<Composite, AutodiffError> {
    let (r, s) = (g.shape(tau)[0], g.shape(tau)[1]);
    let cum = g.cumsum_exclusive(tau)?;
    let ncum = g.neg(cum)?;
    let trans = g.exp(ncum)?;
    let ntau = g.neg(tau)?;
    let att = g.exp(ntau)?;
    let alpha = g.neg(att)?;
    let alpha = g.add_scalar(alpha, T::one())?;
    let weights = g.mul(trans, alpha)?;
    let total = g.sum_axis(tau, 1)?;
    let nt = g.neg(total)?;
    let t_final = g.exp(nt)?;

    let w3 = g.reshape(weights, &[r, s, 1])?;
    let wc = g.mul(w3, colors)?;
    let mut color = g.sum_axis(wc, 1)?;
    if background.iter().any(|&c| c != T::zero()) {
        let tf = g.reshape(t_final, &[r, 1])?;
        let bg = g.constant(Tensor::new(vec![1, 3], background.to_vec())?);
        let add = g.mul(tf, bg)?;
        color = g.add(color, add)?;
    }

    let wt = g.mul(weights, t)?;
    let num = g.sum_axis(wt, 1)?;
    let wsum = g.sum_axis(weights, 1)?;
    let floor = T::lit(1e-10);
    let den = g.clamp(wsum, floor, T::infinity())?;
    let depth = g.div(num, den)?;
    Ok(Composite {
        color,
        depth,
        weights,
        t_final,
    })
}

/// Field quantities at sample points.
#[derive(Clone, Copy, Debug)]
pub struct FieldSamples {
    /// `[P]`
    pub sdf: Var,
    /// `[P, 3]`
    pub gradient: Var,
    /// `[P, 3]`
    pub color: Var,
}

/// Geometry part of a field evaluation.
#[derive(Clone, Copy, Debug)]
pub struct GeometrySamples {
    /// `[P]`
    pub sdf: Var,
    /// `[P, 3]`
    pub gradient: Var,
    pub feature: Option<Var>,
}

/// Anything that yields SDF, SDF gradient and radiance at points on a graph.
pub trait RadianceField<T: Scalar> {
    fn geometry(
        &self,
        g: &mut Graph<T>,
        x: Var,
    ) -> std::result::Result<GeometrySamples, AutodiffError>;

    fn radiance(
        &self,
        g: &mut Graph<T>,
        x: Var,
        dirs: Var,
        geo: &GeometrySamples,
    ) -> std::result::Result<Var, AutodiffError>;

    fn evaluate(
        &self,
        g: &mut Graph<T>,
        x: Var,
        dirs: Var,
    ) -> std::result::Result<FieldSamples, AutodiffError> {
        let geo = self.geometry(g, x)?;
        let color = self.radiance(g, x, dirs, &geo)?;
        Ok(FieldSamples {
            sdf: geo.sdf,
            gradient: geo.gradient,
            color,
        })
    }
}

/// The learned field bound to a graph.
pub struct NeuralField<'a> {
    pub params: &'a BoundParams,
}

impl<T: Scalar> RadianceField<T> for NeuralField<'_> {
    fn geometry(
        &self,
        g: &mut Graph<T>,
        x: Var,
    ) -> std::result::Result<GeometrySamples, AutodiffError> {
        let geo = geometry_forward(g, self.params, x, true)?;
        let n = g.shape(geo.sdf)[0];
        Ok(GeometrySamples {
            sdf: g.reshape(geo.sdf, &[n])?,
            gradient: geo.gradient.expect("gradient requested"),
            feature: Some(geo.feature),
        })
    }

    fn radiance(
        &self,
        g: &mut Graph<T>,
        x: Var,
        dirs: Var,
        geo: &GeometrySamples,
    ) -> std::result::Result<Var, AutodiffError> {
        let feature = geo.feature.expect("neural geometry has features");
        color_forward(g, self.params, x, dirs, geo.gradient, feature)
    }
}

/// Analytic radiance used as a rendering oracle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ColorOracle<T> {
    Constant {
        color: [T; 3],
    },
    /// `max(0, n·l)·albedo + ambient` with `n` the SDF gradient direction.
    Lambertian {
        light: Vec3<T>,
        albedo: [T; 3],
        ambient: T,
    },
}

impl<T: Scalar> ColorOracle<T> {
    pub fn shade(&self, normal: Vec3<T>) -> [T; 3] {
        match *self {
            Self::Constant { color } => color,
            Self::Lambertian {
                light,
                albedo,
                ambient,
            } => {
                let k = normal.normalized().dot(light.normalized()).max(T::zero());
                albedo.map(|a| a * k + ambient)
            }
        }
    }
}

/// Exact SDF and analytic shading, all values constant on the graph.
pub struct AnalyticField<T> {
    pub shape: AnalyticShape<T>,
    pub color: ColorOracle<T>,
}

fn rows<T: Scalar>(g: &Graph<T>, x: Var) -> Vec<Vec3<T>> {
    g.value(x)
        .data()
        .chunks(3)
        .map(|c| Vec3::new(c[0], c[1], c[2]))
        .collect()
}

impl<T: Scalar> RadianceField<T> for AnalyticField<T> {
    fn geometry(
        &self,
        g: &mut Graph<T>,
        x: Var,
    ) -> std::result::Result<GeometrySamples, AutodiffError> {
        let pts = rows(g, x);
        let sdf = pts.iter().map(|&p| self.shape.sdf(p)).collect();
        let grads: Vec<Vec3<T>> = pts.iter().map(|&p| self.shape.gradient(p)).collect();
        Ok(GeometrySamples {
            sdf: g.constant(Tensor::from_vec(sdf)),
            gradient: g.constant(points_tensor(&grads)),
            feature: None,
        })
    }

    fn radiance(
        &self,
        g: &mut Graph<T>,
        _x: Var,
        _dirs: Var,
        geo: &GeometrySamples,
    ) -> std::result::Result<Var, AutodiffError> {
        let normals = rows(g, geo.gradient);
        let colors: Vec<T> = normals.iter().flat_map(|&n| self.color.shade(n)).collect();
        Ok(g.constant(Tensor::new(vec![normals.len(), 3], colors)?))
    }
}

/// Plain-valued rendering output.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderResult<T> {
    pub color: Vec<[T; 3]>,
    pub depth: Vec<T>,
    pub weights: Vec<Vec<T>>,
    pub transmittance_final: Vec<T>,
}

/// Graph-valued output of [`render_rays`], rows in input ray order.
#[derive(Clone, Debug)]
pub struct VolumeOutput {
    /// `[R, 3]`
    pub color: Var,
    /// `[R]`
    pub depth: Var,
    /// `[R]`
    pub t_final: Var,
    /// Per-ray weights as `(group, row)` into `group_weights`.
    pub weight_index: Vec<(usize, usize)>,
    pub group_weights: Vec<Var>,
    /// SDF gradients at every sample point, `[P, 3]`.
    pub gradients: Var,
}

impl VolumeOutput {
    pub fn to_result<T: Scalar>(&self, g: &Graph<T>) -> RenderResult<T> {
        let color = g
            .value(self.color)
            .data()
            .chunks(3)
            .map(|c| [c[0], c[1], c[2]])
            .collect();
        let weights = self
            .weight_index
            .iter()
            .map(|&(grp, row)| {
                let w = g.value(self.group_weights[grp]);
                let s = w.shape()[1];
                w.data()[row * s..(row + 1) * s].to_vec()
            })
            .collect();
        RenderResult {
            color,
            depth: g.value(self.depth).data().to_vec(),
            weights,
            transmittance_final: g.value(self.t_final).data().to_vec(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeConfig<T> {
    pub density: DensityKind,
    pub beta: T,
    pub background: [T; 3],
}

impl<T: Scalar> VolumeConfig<T> {
    pub fn laplace(beta: T) -> Self {
        Self {
            density: DensityKind::Laplace,
            beta,
            background: [T::zero(); 3],
        }
    }
}

/// Volume renders rays with per-ray sample sets.
///
/// Rays are grouped by sample count so each group composites as a dense
/// `[R, S]` block; the field is evaluated once over all samples.
pub fn render_rays<T: Scalar, F: RadianceField<T> + ?Sized>(
    g: &mut Graph<T>,
    field: &F,
    rays: &[Ray<T>],
    samples: &[SampleSet<T>],
    cfg: &VolumeConfig<T>,
) -> Result<VolumeOutput> {
    if rays.len() != samples.len() {
        return Err(RenderError::RayCount(rays.len(), samples.len()));
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        groups.entry(s.len()).or_default().push(i);
    }
    let total: usize = samples.iter().map(|s| s.len()).sum();
    let mut pts = Vec::with_capacity(total);
    let mut dirs = Vec::with_capacity(total);
    for idx in groups.values() {
        for &i in idx {
            pts.extend(samples[i].positions(&rays[i]));
            dirs.extend(std::iter::repeat_n(rays[i].direction, samples[i].len()));
        }
    }
    let xv = g.constant(points_tensor(&pts));
    let dv = g.constant(points_tensor(&dirs));
    let fs = field.evaluate(g, xv, dv)?;
    let cos_all = {
        let m = g.mul(fs.gradient, dv)?;
        g.sum_axis(m, 1)?
    };

    let mut colors = Vec::new();
    let mut depths = Vec::new();
    let mut finals = Vec::new();
    let mut group_weights = Vec::new();
    let mut order = Vec::with_capacity(rays.len());
    let mut weight_index = vec![(0, 0); rays.len()];
    let mut offset = 0;
    for (gi, (&s, idx)) in groups.iter().enumerate() {
        let r = idx.len();
        let n = r * s;
        let sl = |g: &mut Graph<T>, v: Var| g.slice(v, 0, offset, offset + n);
        let sdf = sl(g, fs.sdf)?;
        let sdf = g.reshape(sdf, &[r, s])?;
        let cos = sl(g, cos_all)?;
        let cos = g.reshape(cos, &[r, s])?;
        let col = sl(g, fs.color)?;
        let col = g.reshape(col, &[r, s, 3])?;
        let mut dl = Vec::with_capacity(n);
        let mut tl = Vec::with_capacity(n);
        for &i in idx {
            dl.extend_from_slice(&samples[i].deltas);
            tl.extend_from_slice(&samples[i].t);
        }
        let deltas = g.constant(Tensor::new(vec![r, s], dl)?);
        let tv = g.constant(Tensor::new(vec![r, s], tl)?);
        let tau = optical_depth(g, cfg.density, cfg.beta, sdf, deltas, cos)?;
        let c = composite(g, tau, col, tv, cfg.background)?;
        colors.push(c.color);
        depths.push(c.depth);
        finals.push(c.t_final);
        group_weights.push(c.weights);
        for (row, &i) in idx.iter().enumerate() {
            weight_index[i] = (gi, row);
        }
        order.extend_from_slice(idx);
        offset += n;
    }
    // invert the grouping permutation
    let mut inverse = vec![0; rays.len()];
    for (pos, &i) in order.iter().enumerate() {
        inverse[i] = pos;
    }
    let reorder = |g: &mut Graph<T>, parts: &[Var]| -> std::result::Result<Var, AutodiffError> {
        let cat = if parts.len() == 1 {
            parts[0]
        } else {
            g.concat(parts, 0)?
        };
        if inverse.iter().enumerate().all(|(i, &p)| i == p) {
            Ok(cat)
        } else {
            g.gather(cat, &inverse)
        }
    };
    let color = reorder(g, &colors)?;
    let depth = reorder(g, &depths)?;
    let t_final = reorder(g, &finals)?;
    Ok(VolumeOutput {
        color,
        depth,
        t_final,
        weight_index,
        group_weights,
        gradients: fs.gradient,
    })
}

/// Renders every ray of a bundle; a thin wrapper over [`render_rays`].
pub fn volume_render<T: Scalar, F: RadianceField<T> + ?Sized>(
    g: &mut Graph<T>,
    bundle: &crate::geometry::RayBundle<T>,
    samples: &[SampleSet<T>],
    field: &F,
    cfg: &VolumeConfig<T>,
) -> Result<VolumeOutput> {
    render_rays(g, field, &bundle.rays, samples, cfg)
}

/// Near/far interval of a ray through the scene's bounding sphere.
///
/// Rays that miss get a short interval around their closest approach.
pub fn ray_interval<T: Scalar>(ray: &Ray<T>, radius: T) -> (T, T) {
    match ray.sphere_interval(Vec3::zero(), radius) {
        Some((n, f)) if f - n > T::lit(1e-3) * radius => (n, f),
        _ => {
            let tc = (-ray.origin.dot(ray.direction)).max(T::lit(1e-3));
            let half = T::lit(0.05) * radius;
            ((tc - half).max(T::zero()), tc + half)
        }
    }
}

/// Stratified samples for every ray of a bundle: `n_dense` on the anchor
/// ray, `n_sparse` on the others.
pub fn central_dense_sampling<T: Scalar, R: Rng + ?Sized>(
    bundle: &crate::geometry::RayBundle<T>,
    n_dense: usize,
    n_sparse: usize,
    scene_radius: T,
    mut rng: Option<&mut R>,
) -> Result<Vec<SampleSet<T>>> {
    if n_dense < n_sparse || n_sparse < 2 {
        return Err(RenderError::TooFewSamples {
            min: n_sparse.max(2),
            got: n_dense.min(n_sparse),
        });
    }
    let center = bundle.size.anchor_index();
    bundle
        .rays
        .iter()
        .enumerate()
        .map(|(i, ray)| {
            let (near, far) = ray_interval(ray, scene_radius);
            let n = if i == center { n_dense } else { n_sparse };
            stratified_samples(near, far, n, rng.as_deref_mut())
        })
        .collect()
}

/// Sampling that concentrates points in a window around the SDF zero
/// crossing found by a coarse march.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GuidedSampling {
    /// Coarse march evaluations per ray (no gradients).
    pub coarse: usize,
    /// Fraction of each ray's samples spread uniformly over the full interval.
    pub uniform_fraction: f64,
    /// Window half-width in units of the density `beta`.
    pub window_betas: f64,
    /// Lower bound on the window half-width (world units).
    pub min_window: f64,
}

impl Default for GuidedSampling {
    fn default() -> Self {
        Self {
            coarse: 32,
            uniform_fraction: 0.5,
            window_betas: 8.0,
            min_window: 0.02,
        }
    }
}

/// First `+ → -` crossing of coarse SDF values (linearly interpolated), or
/// the depth of the smallest value when there is none.
pub fn coarse_root<T: Scalar>(t: &[T], sdf: &[T]) -> T {
    for i in 1..t.len() {
        if sdf[i - 1] > T::zero() && sdf[i] <= T::zero() {
            let f = sdf[i - 1] / (sdf[i - 1] - sdf[i]);
            return t[i - 1] + (t[i] - t[i - 1]) * f;
        }
    }
    let mut best = 0;
    for i in 1..sdf.len() {
        if sdf[i] < sdf[best] {
            best = i;
        }
    }
    t[best]
}

/// Surface-guided sample sets for `rays`, `counts[i]` samples each.
pub fn guided_samples<T: Scalar, F: SdfField<T> + ?Sized, R: Rng + ?Sized>(
    field: &F,
    rays: &[Ray<T>],
    counts: &[usize],
    scene_radius: T,
    beta: T,
    cfg: &GuidedSampling,
    rng: &mut R,
) -> Result<Vec<SampleSet<T>>> {
    if rays.len() != counts.len() {
        return Err(RenderError::RayCount(rays.len(), counts.len()));
    }
    let intervals: Vec<(T, T)> = rays.iter().map(|r| ray_interval(r, scene_radius)).collect();
    let nc = cfg.coarse.max(2);
    let mut coarse_t = Vec::with_capacity(rays.len() * nc);
    let mut pts = Vec::with_capacity(rays.len() * nc);
    for (ray, &(near, far)) in rays.iter().zip(&intervals) {
        let step = (far - near) / T::lit((nc - 1) as f64);
        for k in 0..nc {
            let t = near + step * T::lit(k as f64);
            coarse_t.push(t);
            pts.push(ray.at(t));
        }
    }
    let sdf = field.sdf_batch(&pts);
    let half = (beta * T::lit(cfg.window_betas)).max(T::lit(cfg.min_window));
    rays.iter()
        .enumerate()
        .map(|(i, _)| {
            let (near, far) = intervals[i];
            let n = counts[i];
            if n < 2 {
                return Err(RenderError::TooFewSamples { min: 2, got: n });
            }
            let root = coarse_root(&coarse_t[i * nc..(i + 1) * nc], &sdf[i * nc..(i + 1) * nc]);
            let n_uniform = ((n as f64 * cfg.uniform_fraction).round() as usize).clamp(1, n - 1);
            let n_window = n - n_uniform;
            let mut t = strata(near, far, n_uniform, Some(&mut *rng));
            let lo = (root - half).max(near);
            let hi = (root + half).min(far);
            let (lo, hi) = if hi - lo > T::lit(1e-6) {
                (lo, hi)
            } else {
                (near, far)
            };
            t.extend(strata(lo, hi, n_window, Some(&mut *rng)));
            t.sort_by(|a, b| a.partial_cmp(b).expect("finite depths"));
            enforce_increasing(&mut t);
            SampleSet::new(t, (far - near) / T::lit(n as f64))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceHit<T> {
    pub hit: bool,
    pub t: T,
}

/// Sphere tracing with secant refinement when a sign change is crossed.
pub fn sphere_trace<T: Scalar, F: SdfField<T> + ?Sized>(
    ray: &Ray<T>,
    field: &F,
    t_min: T,
    t_max: T,
    eps: T,
    max_steps: usize,
) -> TraceHit<T> {
    let mut t = t_min;
    let mut prev: Option<(T, T)> = None;
    for _ in 0..max_steps {
        if t > t_max {
            break;
        }
        let f = field.sdf(ray.at(t));
        if f.abs() < eps {
            return TraceHit { hit: true, t };
        }
        if f < T::zero() {
            if let Some((tp, fp)) = prev {
                return secant(ray, field, (tp, fp), (t, f), eps);
            }
            return TraceHit { hit: false, t };
        }
        prev = Some((t, f));
        t += f;
    }
    TraceHit { hit: false, t }
}

fn secant<T: Scalar, F: SdfField<T> + ?Sized>(
    ray: &Ray<T>,
    field: &F,
    mut a: (T, T),
    mut b: (T, T),
    eps: T,
) -> TraceHit<T> {
    for _ in 0..64 {
        let t = a.0 + (b.0 - a.0) * a.1 / (a.1 - b.1);
        let f = field.sdf(ray.at(t));
        if f.abs() < eps {
            return TraceHit { hit: true, t };
        }
        if f > T::zero() {
            a = (t, f);
        } else {
            b = (t, f);
        }
    }
    let t = a.0 + (b.0 - a.0) * a.1 / (a.1 - b.1);
    TraceHit {
        hit: field.sdf(ray.at(t)).abs() < eps,
        t,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceConfig<T> {
    pub eps: T,
    pub max_steps: usize,
    pub scene_radius: T,
    pub background: [T; 3],
}

impl<T: Scalar> Default for TraceConfig<T> {
    fn default() -> Self {
        Self {
            eps: T::lit(1e-5),
            max_steps: 256,
            scene_radius: T::one(),
            background: [T::zero(); 3],
        }
    }
}

/// Sphere traces many rays with one batched field evaluation per march step.
pub fn sphere_trace_batch<T: Scalar, F: SdfField<T> + ?Sized>(
    rays: &[Ray<T>],
    field: &F,
    cfg: &TraceConfig<T>,
) -> Vec<TraceHit<T>> {
    let n = rays.len();
    let mut t = vec![T::zero(); n];
    let mut t_max = vec![T::zero(); n];
    let mut prev: Vec<Option<(T, T)>> = vec![None; n];
    let mut out = vec![
        TraceHit {
            hit: false,
            t: T::zero()
        };
        n
    ];
    let mut active = Vec::new();
    for (i, ray) in rays.iter().enumerate() {
        if let Some((a, b)) = ray.sphere_interval(Vec3::zero(), cfg.scene_radius) {
            t[i] = a;
            t_max[i] = b;
            active.push(i);
        }
    }
    let mut pending = Vec::new();
    for _ in 0..cfg.max_steps {
        if active.is_empty() {
            break;
        }
        let pts: Vec<Vec3<T>> = active.iter().map(|&i| rays[i].at(t[i])).collect();
        let vals = field.sdf_batch(&pts);
        let mut next = Vec::with_capacity(active.len());
        for (&i, &f) in active.iter().zip(&vals) {
            if f.abs() < cfg.eps {
                out[i] = TraceHit { hit: true, t: t[i] };
            } else if f < T::zero() {
                if let Some(p) = prev[i] {
                    pending.push((i, p, (t[i], f)));
                }
            } else {
                prev[i] = Some((t[i], f));
                t[i] += f;
                if t[i] <= t_max[i] {
                    next.push(i);
                }
            }
        }
        active = next;
    }
    for (i, a, b) in pending {
        out[i] = secant(&rays[i], field, a, b, cfg.eps);
    }
    out
}

/// Graph-valued output of [`surface_render`].
#[derive(Clone, Debug)]
pub struct SurfaceOutput<T> {
    /// `[R, 3]`
    pub color: Var,
    pub hits: Vec<TraceHit<T>>,
    /// Differentiable surface points of hit rays, `[H, 3]` (hit order).
    pub points: Option<Var>,
}

/// Renders `rays` by evaluating radiance once at traced surface points.
///
/// Hit points are re-expressed as `x̂ = x̂₀ - f(x̂₀)/⟨∇f₀, v⟩ · v` with `x̂₀`,
/// `∇f₀` detached, so gradients reach the geometry through `f`.
pub fn surface_render<T, F, S>(
    g: &mut Graph<T>,
    field: &F,
    tracer: &S,
    rays: &[Ray<T>],
    cfg: &TraceConfig<T>,
) -> Result<SurfaceOutput<T>>
where
    T: Scalar,
    F: RadianceField<T> + ?Sized,
    S: SdfField<T> + ?Sized,
{
    let hits = sphere_trace_batch(rays, tracer, cfg);
    let hit_idx: Vec<usize> = (0..rays.len()).filter(|&i| hits[i].hit).collect();
    let bg = g.constant(Tensor::new(vec![1, 3], cfg.background.to_vec())?);
    if hit_idx.is_empty() {
        let color = g.broadcast(bg, &[rays.len(), 3])?;
        return Ok(SurfaceOutput {
            color,
            hits,
            points: None,
        });
    }
    let x0: Vec<Vec3<T>> = hit_idx.iter().map(|&i| rays[i].at(hits[i].t)).collect();
    let dirs: Vec<Vec3<T>> = hit_idx.iter().map(|&i| rays[i].direction).collect();
    let x0v = g.constant(points_tensor(&x0));
    let dv = g.constant(points_tensor(&dirs));
    let first = field.geometry(g, x0v)?;
    let denom: Vec<T> = rows(g, first.gradient)
        .iter()
        .zip(&dirs)
        .map(|(gr, d)| {
            let c = gr.dot(*d);
            // keep the step finite for grazing hits
            if c.abs() < T::lit(1e-6) {
                -T::lit(1e-6)
            } else {
                c
            }
        })
        .collect();
    let h = hit_idx.len();
    let denom = g.constant(Tensor::new(vec![h], denom)?);
    let step = g.div(first.sdf, denom)?;
    let step = g.reshape(step, &[h, 1])?;
    let offset = g.mul(step, dv)?;
    let xhat = g.sub(x0v, offset)?;
    let geo = field.geometry(g, xhat)?;
    let hit_color = field.radiance(g, xhat, dv, &geo)?;
    let mut gather = Vec::with_capacity(rays.len());
    let mut k = 0;
    for hit in &hits {
        if hit.hit {
            gather.push(k);
            k += 1;
        } else {
            gather.push(h);
        }
    }
    let all = if h < rays.len() {
        g.concat(&[hit_color, bg], 0)?
    } else {
        hit_color
    };
    let color = g.gather(all, &gather)?;
    Ok(SurfaceOutput {
        color,
        hits,
        points: Some(xhat),
    })
}

/// Surface point per ray from expected depth.
pub fn rendered_depth<T: Scalar>(result: &RenderResult<T>, rays: &[Ray<T>]) -> Vec<Vec3<T>> {
    rays.iter()
        .zip(&result.depth)
        .map(|(r, &d)| r.at(d))
        .collect()
}

/// Expected depth of one sample set under `weights`.
pub fn expected_depth<T: Scalar>(weights: &[T], samples: &SampleSet<T>) -> T {
    let wsum: T = weights.iter().copied().sum();
    let num: T = weights.iter().zip(&samples.t).map(|(&w, &t)| w * t).sum();
    num / wsum.max(T::lit(1e-10))
}
