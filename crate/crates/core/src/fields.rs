//! Geometry (SDF) and color networks, positional encoding, and analytic
//! reference shapes.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, Graph, Tensor, Var};
use crate::math::{fibonacci_sphere, Vec3};
use crate::scalar::Scalar;

type Result<T> = std::result::Result<T, AutodiffError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodingConfig {
    pub num_freqs: usize,
    pub include_input: bool,
}

impl EncodingConfig {
    pub const fn new(num_freqs: usize, include_input: bool) -> Self {
        Self {
            num_freqs,
            include_input,
        }
    }

    pub fn output_dim(&self, d: usize) -> usize {
        d * 2 * self.num_freqs + if self.include_input { d } else { 0 }
    }
}

/// Frequency encoding `[x, sin(2⁰πx), cos(2⁰πx), …, sin(2^{L-1}πx), cos(2^{L-1}πx)]`,
/// one block of `d` values per entry.
pub fn positional_encode<T: Scalar>(x: &[T], cfg: &EncodingConfig) -> Vec<T> {
    let mut out = Vec::with_capacity(cfg.output_dim(x.len()));
    if cfg.include_input {
        out.extend_from_slice(x);
    }
    for l in 0..cfg.num_freqs {
        let w = T::lit((1u64 << l) as f64) * T::PI();
        out.extend(x.iter().map(|&v| (w * v).sin()));
        out.extend(x.iter().map(|&v| (w * v).cos()));
    }
    out
}

/// Encodes rows of `x: [N, d]` on the graph.
///
/// With `tangents`, also returns `∂enc/∂x_k` for every input axis `k`, stacked
/// as `[d·N, D]` with axis-major row blocks.
pub fn encode_graph<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    cfg: &EncodingConfig,
    tangents: bool,
) -> Result<(Var, Option<Var>)> {
    let (n, d) = match g.shape(x) {
        [n, d] => (*n, *d),
        s => {
            return Err(AutodiffError::Rank {
                op: "encode",
                expected: 2,
                shape: s.to_vec(),
            })
        }
    };
    let mut parts = Vec::new();
    let mut slopes = Vec::new();
    if cfg.include_input {
        parts.push(x);
        if tangents {
            slopes.push(g.constant(Tensor::full(&[n, d], T::one())));
        }
    }
    for l in 0..cfg.num_freqs {
        let w = T::lit((1u64 << l) as f64) * T::PI();
        let xs = g.scale(x, w)?;
        let s = g.sin(xs)?;
        let c = g.cos(xs)?;
        parts.push(s);
        parts.push(c);
        if tangents {
            slopes.push(g.scale(c, w)?);
            slopes.push(g.scale(s, -w)?);
        }
    }
    if parts.is_empty() {
        return Err(AutodiffError::Empty { op: "encode" });
    }
    let enc = g.concat(&parts, 1)?;
    if !tangents {
        return Ok((enc, None));
    }
    let width = g.shape(enc)[1];
    let slope = g.concat(&slopes, 1)?;
    let slope = g.reshape(slope, &[1, n, width])?;
    // column j of each d-wide block belongs to input axis j
    let mut select = vec![T::zero(); d * width];
    for k in 0..d {
        for col in (k..width).step_by(d) {
            select[k * width + col] = T::one();
        }
    }
    let select = g.constant(Tensor::new(vec![d, 1, width], select)?);
    let t = g.mul(slope, select)?;
    let t = g.reshape(t, &[d * n, width])?;
    Ok((enc, Some(t)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldConfig {
    pub geo_width: usize,
    /// Hidden layers of the geometry network.
    pub geo_layers: usize,
    /// Layer index that receives the re-injected encoded input.
    pub skip: Option<usize>,
    pub feature_dim: usize,
    pub color_width: usize,
    pub color_layers: usize,
    pub pos_encoding: EncodingConfig,
    pub dir_encoding: EncodingConfig,
    pub softplus_beta: f64,
    pub init_radius: f64,
}

impl FieldConfig {
    /// 8×256 geometry network with a skip at layer 4, 4×256 color network.
    pub fn full() -> Self {
        Self {
            geo_width: 256,
            geo_layers: 8,
            skip: Some(4),
            feature_dim: 256,
            color_width: 256,
            color_layers: 4,
            pos_encoding: EncodingConfig::new(10, true),
            dir_encoding: EncodingConfig::new(4, true),
            softplus_beta: 100.0,
            init_radius: 0.75,
        }
    }

    /// Quarter-width variant of [`FieldConfig::full`].
    pub fn desk() -> Self {
        Self {
            geo_width: 64,
            feature_dim: 64,
            color_width: 64,
            pos_encoding: EncodingConfig::new(6, true),
            ..Self::full()
        }
    }

    /// Small network for quick synthetic runs and tests.
    pub fn tiny() -> Self {
        Self {
            geo_width: 32,
            geo_layers: 4,
            skip: Some(2),
            feature_dim: 16,
            color_width: 32,
            color_layers: 2,
            pos_encoding: EncodingConfig::new(4, true),
            dir_encoding: EncodingConfig::new(2, true),
            softplus_beta: 100.0,
            init_radius: 0.75,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "full" => Some(Self::full()),
            "desk" => Some(Self::desk()),
            "tiny" => Some(Self::tiny()),
            _ => None,
        }
    }

    fn geo_input_dim(&self) -> usize {
        self.pos_encoding.output_dim(3)
    }

    fn skip_layer(&self) -> Option<usize> {
        self.skip.filter(|&s| s >= 1 && s <= self.geo_layers)
    }

    /// `(in, out)` of each geometry linear layer.
    pub fn geometry_dims(&self) -> Vec<(usize, usize)> {
        let d_in = self.geo_input_dim();
        let skip = self.skip_layer();
        let n_lin = self.geo_layers + 1;
        (0..n_lin)
            .map(|l| {
                let input = if l == 0 { d_in } else { self.geo_width };
                let mut output = if l + 1 == n_lin {
                    1 + self.feature_dim
                } else {
                    self.geo_width
                };
                if Some(l + 1) == skip {
                    output = self.geo_width - d_in;
                }
                (input, output)
            })
            .collect()
    }

    pub fn color_dims(&self) -> Vec<(usize, usize)> {
        let d_in = 3 + self.dir_encoding.output_dim(3) + 3 + self.feature_dim;
        let mut dims = Vec::new();
        let mut prev = d_in;
        for _ in 0..self.color_layers {
            dims.push((prev, self.color_width));
            prev = self.color_width;
        }
        dims.push((prev, 3));
        dims
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.geo_width == 0 || self.geo_layers == 0 || self.color_width == 0 {
            return Err("network widths and depths must be positive".into());
        }
        if self.skip_layer().is_some() && self.geo_width <= self.geo_input_dim() {
            return Err(format!(
                "geo_width {} must exceed the encoded input dimension {} to use a skip",
                self.geo_width,
                self.geo_input_dim()
            ));
        }
        if !(self.softplus_beta > 0.0) {
            return Err("softplus_beta must be positive".into());
        }
        if !(self.init_radius > 0.0) {
            return Err("init_radius must be positive".into());
        }
        Ok(())
    }
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self::desk()
    }
}

/// Dense layer `y = x W + b` with `W: [in, out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Linear<T> {
    fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[input, output]),
            bias: Tensor::zeros(&[output]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.shape()[1]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FieldParams<T> {
    pub config: FieldConfig,
    pub geometry: Vec<Linear<T>>,
    pub color: Vec<Linear<T>>,
}

fn normal<T: Scalar, R: Rng + ?Sized>(rng: &mut R, mean: f64, std: f64) -> T {
    let z: f64 = StandardNormal.sample(rng);
    T::lit(mean + std * z)
}

impl<T: Scalar> FieldParams<T> {
    /// Geometric initialization of the SDF network at `config.init_radius`,
    /// uniform fan-in initialization of the color network.
    pub fn new<R: Rng + ?Sized>(config: FieldConfig, rng: &mut R) -> Self {
        let mut p = Self {
            config,
            geometry: config
                .geometry_dims()
                .into_iter()
                .map(|(i, o)| Linear::zeros(i, o))
                .collect(),
            color: config
                .color_dims()
                .into_iter()
                .map(|(i, o)| Linear::zeros(i, o))
                .collect(),
        };
        p.init_geometric(config.init_radius, rng);
        for layer in &mut p.color {
            let bound = 1.0 / (layer.input_dim() as f64).sqrt();
            for w in layer.weight.data_mut() {
                *w = T::lit(rng.random_range(-bound..bound));
            }
            for b in layer.bias.data_mut() {
                *b = T::lit(rng.random_range(-bound..bound));
            }
        }
        p
    }

    /// Re-initializes the geometry network to approximate a sphere SDF.
    ///
    /// The first layer holds evenly spread unit directions `a·d_j`, so
    /// `Σ_j relu(a d_j·x) ≈ a·n‖x‖/4`; hidden layers start as sum-preserving
    /// non-negative maps and the output sums the units back to `‖x‖ - radius`.
    /// Encoded frequency inputs start with zero weight.
    pub fn init_geometric<R: Rng + ?Sized>(&mut self, radius: f64, rng: &mut R) {
        const GAIN: f64 = 2.0;
        const NOISE: f64 = 1e-4;
        let skip = self.config.skip_layer();
        let n_lin = self.geometry.len();
        let first_out = self.geometry[0].output_dim();
        for (l, layer) in self.geometry.iter_mut().enumerate() {
            let (input, output) = (layer.input_dim(), layer.output_dim());
            let w = layer.weight.data_mut();
            w.iter_mut().for_each(|v| *v = T::zero());
            layer.bias.data_mut().iter_mut().for_each(|b| *b = T::zero());
            if l + 1 == n_lin {
                let m = 4.0 / (GAIN * first_out as f64);
                let feat_std = 1.0 / (input as f64).sqrt();
                for row in w.chunks_mut(output) {
                    row[0] = normal(rng, m, NOISE);
                    for v in &mut row[1..] {
                        *v = normal(rng, 0.0, feat_std);
                    }
                }
                layer.bias.data_mut()[0] = T::lit(-radius);
                continue;
            }
            if l == 0 {
                for (j, d) in fibonacci_sphere(output).into_iter().enumerate() {
                    for k in 0..3 {
                        w[k * output + j] = T::lit(GAIN * d[k]);
                    }
                }
                continue;
            }
            let d_in = self.config.geo_input_dim();
            if Some(l) == skip {
                // undo the 1/√2 on the carried units; re-injected inputs start at zero
                for j in 0..(input - d_in).min(output) {
                    w[j * output + j] = T::lit(std::f64::consts::SQRT_2);
                }
            } else {
                for j in 0..input.min(output) {
                    w[j * output + j] = T::one();
                }
                // spread dropped units evenly so unit sums are preserved
                for j in output..input {
                    for k in 0..output {
                        w[j * output + k] += T::lit(1.0 / output as f64);
                    }
                }
            }
            for v in w.iter_mut() {
                *v += normal(rng, 0.0, NOISE);
            }
        }
        // remove the residual offset of the smooth activations on the target sphere
        let probes: Vec<Vec3<T>> = fibonacci_sphere(64)
            .into_iter()
            .map(|d| (d * radius).cast())
            .collect();
        let vals = self.sdf_batch(&probes);
        let mean = vals.iter().copied().sum::<T>() / T::lit(vals.len() as f64);
        let last = self.geometry.last_mut().expect("output layer");
        last.bias.data_mut()[0] -= mean;
    }

    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        self.geometry
            .iter()
            .chain(&self.color)
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.geometry
            .iter_mut()
            .chain(self.color.iter_mut())
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    /// Places every tensor on `g`, as parameters when `trainable`.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> BoundParams {
        let mut leaf = |t: &Tensor<T>| {
            if trainable {
                g.param(t.clone())
            } else {
                g.constant(t.clone())
            }
        };
        let geometry = self
            .geometry
            .iter()
            .map(|l| (leaf(&l.weight), leaf(&l.bias)))
            .collect();
        let color = self
            .color
            .iter()
            .map(|l| (leaf(&l.weight), leaf(&l.bias)))
            .collect();
        BoundParams {
            config: self.config,
            geometry,
            color,
        }
    }
}

/// Graph handles of a [`FieldParams`], in [`FieldParams::tensors`] order.
#[derive(Clone, Debug)]
pub struct BoundParams {
    pub config: FieldConfig,
    pub geometry: Vec<(Var, Var)>,
    pub color: Vec<(Var, Var)>,
}

impl BoundParams {
    pub fn vars(&self) -> Vec<Var> {
        self.geometry
            .iter()
            .chain(&self.color)
            .flat_map(|&(w, b)| [w, b])
            .collect()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GeometryOutput {
    /// `[N, 1]`
    pub sdf: Var,
    /// `[N, 3]`, present when requested.
    pub gradient: Option<Var>,
    /// `[N, F]`
    pub feature: Var,
}

/// Evaluates the geometry network on `x: [N, 3]`.
///
/// The spatial gradient is propagated as three forward-mode tangent streams
/// through every layer, so it stays an ordinary differentiable graph value.
pub fn geometry_forward<T: Scalar>(
    g: &mut Graph<T>,
    p: &BoundParams,
    x: Var,
    with_gradient: bool,
) -> Result<GeometryOutput> {
    let cfg = &p.config;
    let n = g.shape(x)[0];
    let beta = T::lit(cfg.softplus_beta);
    let inv_sqrt2 = T::lit(std::f64::consts::FRAC_1_SQRT_2);
    let skip = cfg.skip_layer();
    let (enc, tan) = encode_graph(g, x, &cfg.pos_encoding, with_gradient)?;
    let mut h = enc;
    let mut dh = tan;
    let last = p.geometry.len() - 1;
    for (l, &(w, b)) in p.geometry.iter().enumerate() {
        if Some(l) == skip {
            let c = g.concat(&[h, enc], 1)?;
            h = g.scale(c, inv_sqrt2)?;
            if let (Some(d), Some(t)) = (dh, tan) {
                let c = g.concat(&[d, t], 1)?;
                dh = Some(g.scale(c, inv_sqrt2)?);
            }
        }
        if l == last {
            let z = g.matmul(h, w)?;
            let z = g.add(z, b)?;
            let sdf = g.slice(z, 1, 0, 1)?;
            let feature = g.slice(z, 1, 1, g.shape(z)[1])?;
            let gradient = match dh {
                Some(d) => {
                    let w0 = g.slice(w, 1, 0, 1)?;
                    let dz = g.matmul(d, w0)?;
                    let dz = g.reshape(dz, &[3, n])?;
                    Some(g.permute(dz, &[1, 0])?)
                }
                None => None,
            };
            return Ok(GeometryOutput {
                sdf,
                gradient,
                feature,
            });
        }
        let z = g.matmul(h, w)?;
        let z = g.add(z, b)?;
        let (hn, slope) = g.shifted_softplus(z, beta)?;
        h = hn;
        dh = match dh {
            Some(d) => {
                let dz = g.matmul(d, w)?;
                Some(g.mul_tiled(dz, slope)?)
            }
            None => None,
        };
    }
    unreachable!("geometry network has at least one layer")
}

/// Color network on `[x, enc(v), n, feature]`, rows aligned.
pub fn color_forward<T: Scalar>(
    g: &mut Graph<T>,
    p: &BoundParams,
    x: Var,
    dirs: Var,
    normals: Var,
    feature: Var,
) -> Result<Var> {
    let (venc, _) = encode_graph(g, dirs, &p.config.dir_encoding, false)?;
    let mut h = g.concat(&[x, venc, normals, feature], 1)?;
    let last = p.color.len() - 1;
    for (l, &(w, b)) in p.color.iter().enumerate() {
        let z = g.matmul(h, w)?;
        let z = g.add(z, b)?;
        h = if l == last { g.sigmoid(z)? } else { g.relu(z)? };
    }
    Ok(h)
}

pub fn points_tensor<T: Scalar>(ps: &[Vec3<T>]) -> Tensor<T> {
    let data = ps.iter().flat_map(|p| p.to_array()).collect();
    Tensor::new(vec![ps.len(), 3], data).expect("3 values per point")
}

fn rows3<T: Scalar>(t: &Tensor<T>) -> Vec<Vec3<T>> {
    t.data()
        .chunks(3)
        .map(|c| Vec3::new(c[0], c[1], c[2]))
        .collect()
}

const INFERENCE_CHUNK: usize = 4096;

impl<T: Scalar> FieldParams<T> {
    /// SDF values and gradients for many points, without parameter gradients.
    pub fn sdf_and_gradient_batch(&self, ps: &[Vec3<T>]) -> (Vec<T>, Vec<Vec3<T>>) {
        let mut sdf = Vec::with_capacity(ps.len());
        let mut grad = Vec::with_capacity(ps.len());
        for chunk in ps.chunks(INFERENCE_CHUNK) {
            let mut g = Graph::new();
            let b = self.bind(&mut g, false);
            let x = g.constant(points_tensor(chunk));
            let out = geometry_forward(&mut g, &b, x, true).expect("consistent layer shapes");
            sdf.extend_from_slice(g.value(out.sdf).data());
            grad.extend(rows3(g.value(out.gradient.expect("requested"))));
        }
        (sdf, grad)
    }
}

/// Single-point SDF value and feature vector.
pub fn sdf_eval<T: Scalar>(params: &FieldParams<T>, x: Vec3<T>) -> (T, Vec<T>) {
    let mut g = Graph::new();
    let b = params.bind(&mut g, false);
    let xv = g.constant(points_tensor(&[x]));
    let out = geometry_forward(&mut g, &b, xv, false).expect("consistent layer shapes");
    (g.value(out.sdf).item(), g.value(out.feature).data().to_vec())
}

pub fn sdf_gradient<T: Scalar>(params: &FieldParams<T>, x: Vec3<T>) -> Vec3<T> {
    params.sdf_and_gradient_batch(&[x]).1[0]
}

pub fn color_eval<T: Scalar>(
    params: &FieldParams<T>,
    x: Vec3<T>,
    v: Vec3<T>,
    n: Vec3<T>,
    feature: &[T],
) -> [T; 3] {
    let mut g = Graph::new();
    let b = params.bind(&mut g, false);
    let xv = g.constant(points_tensor(&[x]));
    let vv = g.constant(points_tensor(&[v]));
    let nv = g.constant(points_tensor(&[n]));
    let fv = g.constant(
        Tensor::new(vec![1, feature.len()], feature.to_vec()).expect("feature row"),
    );
    let c = color_forward(&mut g, &b, xv, vv, nv, fv).expect("consistent layer shapes");
    let d = g.value(c).data();
    [d[0], d[1], d[2]]
}

/// Anything that can report signed distances.
pub trait SdfField<T: Scalar>: Sync {
    fn sdf(&self, p: Vec3<T>) -> T;

    fn sdf_batch(&self, ps: &[Vec3<T>]) -> Vec<T> {
        ps.iter().map(|&p| self.sdf(p)).collect()
    }

    /// Central-difference gradient unless overridden.
    fn gradient(&self, p: Vec3<T>) -> Vec3<T> {
        let h = T::lit(1e-6);
        let two = T::lit(2.0);
        let dx = Vec3::new(h, T::zero(), T::zero());
        let dy = Vec3::new(T::zero(), h, T::zero());
        let dz = Vec3::new(T::zero(), T::zero(), h);
        Vec3::new(
            (self.sdf(p + dx) - self.sdf(p - dx)) / (two * h),
            (self.sdf(p + dy) - self.sdf(p - dy)) / (two * h),
            (self.sdf(p + dz) - self.sdf(p - dz)) / (two * h),
        )
    }
}

impl<T: Scalar> SdfField<T> for FieldParams<T> {
    fn sdf(&self, p: Vec3<T>) -> T {
        sdf_eval(self, p).0
    }

    fn sdf_batch(&self, ps: &[Vec3<T>]) -> Vec<T> {
        let mut out = Vec::with_capacity(ps.len());
        for chunk in ps.chunks(INFERENCE_CHUNK) {
            let mut g = Graph::new();
            let b = self.bind(&mut g, false);
            let x = g.constant(points_tensor(chunk));
            let o = geometry_forward(&mut g, &b, x, false).expect("consistent layer shapes");
            out.extend_from_slice(g.value(o.sdf).data());
        }
        out
    }

    fn gradient(&self, p: Vec3<T>) -> Vec3<T> {
        sdf_gradient(self, p)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AnalyticShape<T> {
    Sphere {
        center: Vec3<T>,
        radius: T,
    },
    Box {
        center: Vec3<T>,
        half_extents: Vec3<T>,
    },
    /// Ring in the xy-plane around the z-axis through `center`.
    Torus {
        center: Vec3<T>,
        major: T,
        minor: T,
    },
}

impl<T: Scalar> AnalyticShape<T> {
    pub fn sphere(radius: T) -> Self {
        Self::Sphere {
            center: Vec3::zero(),
            radius,
        }
    }

    pub fn cube(half: T) -> Self {
        Self::Box {
            center: Vec3::zero(),
            half_extents: Vec3::splat(half),
        }
    }

    pub fn torus(major: T, minor: T) -> Self {
        Self::Torus {
            center: Vec3::zero(),
            major,
            minor,
        }
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        let ok = match *self {
            Self::Sphere { radius, .. } => radius > T::zero(),
            Self::Box { half_extents: h, .. } => {
                h.x > T::zero() && h.y > T::zero() && h.z > T::zero()
            }
            Self::Torus { major, minor, .. } => major > T::zero() && minor > T::zero(),
        };
        if ok {
            Ok(())
        } else {
            Err(format!("shape parameters must be strictly positive: {self:?}"))
        }
    }

    pub fn center(&self) -> Vec3<T> {
        match *self {
            Self::Sphere { center, .. } | Self::Box { center, .. } | Self::Torus { center, .. } => {
                center
            }
        }
    }

    /// Radius of a sphere about [`AnalyticShape::center`] enclosing the shape.
    pub fn bounding_radius(&self) -> T {
        match *self {
            Self::Sphere { radius, .. } => radius,
            Self::Box { half_extents, .. } => half_extents.norm(),
            Self::Torus { major, minor, .. } => major + minor,
        }
    }

    pub fn surface_area(&self) -> T {
        let pi = T::PI();
        let four = T::lit(4.0);
        match *self {
            Self::Sphere { radius, .. } => four * pi * radius * radius,
            Self::Box { half_extents: h, .. } => {
                T::lit(8.0) * (h.x * h.y + h.y * h.z + h.x * h.z)
            }
            Self::Torus { major, minor, .. } => four * pi * pi * major * minor,
        }
    }

    pub fn analytic_gradient(&self, p: Vec3<T>) -> Vec3<T> {
        match *self {
            Self::Sphere { center, .. } => (p - center).normalized(),
            Self::Torus { center, major, .. } => {
                let q = p - center;
                let rho = (q.x * q.x + q.y * q.y).sqrt();
                let ring = Vec3::new(q.x / rho * major, q.y / rho * major, T::zero());
                (q - ring).normalized()
            }
            Self::Box { .. } => SdfField::gradient(&BoxFd(self), p),
        }
    }

    /// Area-uniform samples on the surface.
    pub fn sample_surface<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Vec3<T>> {
        let std = Normal::new(0.0, 1.0).expect("unit normal");
        (0..n)
            .map(|_| match *self {
                Self::Sphere { center, radius } => {
                    let v = Vec3::new(
                        T::lit(std.sample(rng)),
                        T::lit(std.sample(rng)),
                        T::lit(std.sample(rng)),
                    );
                    center + v.normalized() * radius
                }
                Self::Box {
                    center,
                    half_extents: h,
                } => {
                    let areas = [h.y * h.z, h.x * h.z, h.x * h.y];
                    let total = areas[0] + areas[1] + areas[2];
                    let pick = T::lit(rng.random::<f64>()) * total;
                    let axis = if pick < areas[0] {
                        0
                    } else if pick < areas[0] + areas[1] {
                        1
                    } else {
                        2
                    };
                    let mut c = [T::zero(); 3];
                    let ha = h.to_array();
                    for (i, v) in c.iter_mut().enumerate() {
                        *v = T::lit(rng.random_range(-1.0..1.0)) * ha[i];
                    }
                    c[axis] = if rng.random_bool(0.5) { ha[axis] } else { -ha[axis] };
                    center + Vec3::from_array(c)
                }
                Self::Torus {
                    center,
                    major,
                    minor,
                } => loop {
                    let u = T::lit(rng.random_range(0.0..std::f64::consts::TAU));
                    let v = T::lit(rng.random_range(0.0..std::f64::consts::TAU));
                    // density of the tube angle is proportional to the ring radius
                    let accept = (major + minor * v.cos()) / (major + minor);
                    if T::lit(rng.random::<f64>()) < accept {
                        let ring = major + minor * v.cos();
                        break center
                            + Vec3::new(ring * u.cos(), ring * u.sin(), minor * v.sin());
                    }
                },
            })
            .collect()
    }
}

/// Exact signed distance to an analytic shape.
pub fn analytic_sdf<T: Scalar>(shape: &AnalyticShape<T>, x: Vec3<T>) -> T {
    match *shape {
        AnalyticShape::Sphere { center, radius } => (x - center).norm() - radius,
        AnalyticShape::Box {
            center,
            half_extents,
        } => {
            let q = (x - center).abs() - half_extents;
            let outside = q.max_scalar(T::zero()).norm();
            let inside = q.max_element().min(T::zero());
            outside + inside
        }
        AnalyticShape::Torus {
            center,
            major,
            minor,
        } => {
            let q = x - center;
            let ring = (q.x * q.x + q.y * q.y).sqrt() - major;
            (ring * ring + q.z * q.z).sqrt() - minor
        }
    }
}

struct BoxFd<'a, T>(&'a AnalyticShape<T>);

impl<T: Scalar> SdfField<T> for BoxFd<'_, T> {
    fn sdf(&self, p: Vec3<T>) -> T {
        analytic_sdf(self.0, p)
    }
}

impl<T: Scalar> SdfField<T> for AnalyticShape<T> {
    fn sdf(&self, p: Vec3<T>) -> T {
        analytic_sdf(self, p)
    }

    fn gradient(&self, p: Vec3<T>) -> Vec3<T> {
        self.analytic_gradient(p)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn encoding_examples() {
        let cfg = EncodingConfig::new(2, true);
        assert_eq!(positional_encode(&[0.0], &cfg), vec![0.0, 0.0, 1.0, 0.0, 1.0]);
        let id = EncodingConfig::new(0, true);
        assert_eq!(positional_encode(&[0.3, -0.2], &id), vec![0.3, -0.2]);
        let half = positional_encode(&[0.5f64], &EncodingConfig::new(1, false));
        assert!((half[0] - 1.0).abs() < 1e-15 && half[1].abs() < 1e-15);
        assert_eq!(cfg.output_dim(3), 15);
    }

    #[test]
    fn graph_encoding_matches_plain_and_tangents_match_fd() {
        let cfg = EncodingConfig::new(3, true);
        let pts = [Vec3::new(0.1f64, -0.4, 0.7), Vec3::new(-0.9, 0.2, 0.05)];
        let mut g = Graph::new();
        let x = g.constant(points_tensor(&pts));
        let (enc, tan) = encode_graph(&mut g, x, &cfg, true).unwrap();
        let d = cfg.output_dim(3);
        let tan = g.value(tan.unwrap()).clone();
        for (i, p) in pts.iter().enumerate() {
            let plain = positional_encode(&p.to_array(), &cfg);
            assert_eq!(&g.value(enc).data()[i * d..(i + 1) * d], plain.as_slice());
            for k in 0..3 {
                let mut a = p.to_array();
                let mut b = p.to_array();
                a[k] += 1e-6;
                b[k] -= 1e-6;
                let (ea, eb) = (positional_encode(&a, &cfg), positional_encode(&b, &cfg));
                for j in 0..d {
                    let fd = (ea[j] - eb[j]) / 2e-6;
                    let an = tan.data()[(k * pts.len() + i) * d + j];
                    assert!((fd - an).abs() < 1e-6, "axis {k} col {j}: {fd} vs {an}");
                }
            }
        }
    }

    fn params(cfg: FieldConfig, seed: u64) -> FieldParams<f64> {
        FieldParams::new(cfg, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn geometric_init_approximates_sphere() {
        for cfg in [FieldConfig::desk(), FieldConfig::tiny()] {
            let p = params(cfg, 3);
            let r = cfg.init_radius;
            let (s0, _) = sdf_eval(&p, Vec3::zero());
            assert!((s0 + r).abs() < 0.15, "sdf at origin {s0}");
            assert!(sdf_eval(&p, Vec3::new(2.0 * r, 0.0, 0.0)).0 > 0.0);

            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let pts: Vec<Vec3<f64>> = (0..500)
                .map(|_| loop {
                    let v = Vec3::new(
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                    );
                    if v.norm() <= 1.0 {
                        break v;
                    }
                })
                .collect();
            let (_, grads) = p.sdf_and_gradient_batch(&pts);
            let mean: f64 = grads.iter().map(|g| g.norm()).sum::<f64>() / grads.len() as f64;
            assert!((0.8..=1.2).contains(&mean), "mean gradient norm {mean}");

            // a zero crossing along every radial direction within [0.5r, 1.5r]
            let dirs = AnalyticShape::sphere(1.0).sample_surface(50, &mut rng);
            for d in dirs {
                let (lo, hi) = (p.sdf(d * (0.5 * r)), p.sdf(d * (1.5 * r)));
                assert!(lo < 0.0 && hi > 0.0, "no crossing along {d:?}: {lo} {hi} width {}", cfg.geo_width);
                let g = p.gradient(d * r);
                assert!(g.dot(d) > 0.0);
            }
        }
    }

    #[test]
    fn sdf_gradient_matches_finite_differences() {
        let p = params(FieldConfig::tiny(), 5);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let x = Vec3::new(
                rng.random_range(-0.9..0.9),
                rng.random_range(-0.9..0.9),
                rng.random_range(-0.9..0.9),
            );
            let an = sdf_gradient(&p, x);
            let h = 1e-6;
            for k in 0..3 {
                let mut a = x.to_array();
                let mut b = x.to_array();
                a[k] += h;
                b[k] -= h;
                let fd = (p.sdf(Vec3::from_array(a)) - p.sdf(Vec3::from_array(b))) / (2.0 * h);
                assert!((fd - an[k]).abs() / an[k].abs().max(1.0) < 1e-4);
            }
        }
    }

    #[test]
    fn evaluation_is_pure_and_color_is_view_dependent() {
        let p = params(FieldConfig::tiny(), 8);
        let x = Vec3::new(0.2, 0.1, -0.3);
        assert_eq!(sdf_eval(&p, x), sdf_eval(&p, x));
        let (_, feat) = sdf_eval(&p, x);
        let n = sdf_gradient(&p, x);
        let v = Vec3::new(0.0, 0.0, 1.0);
        let c = color_eval(&p, x, v, n, &feat);
        assert!(c.iter().all(|&k| k > 0.0 && k < 1.0));
        assert_eq!(c, color_eval(&p, x, v, n, &feat));
        let v2 = Vec3::new(0.3, 0.0, 1.0).normalized();
        assert_ne!(c, color_eval(&p, x, v2, n, &feat));
    }

    #[test]
    fn analytic_shape_examples() {
        let s = AnalyticShape::sphere(1.0);
        assert_eq!(analytic_sdf(&s, Vec3::zero()), -1.0);
        assert_eq!(analytic_sdf(&s, Vec3::new(0.0, 3.0, 0.0)), 2.0);
        let t = AnalyticShape::torus(1.0f64, 0.25);
        assert!(analytic_sdf(&t, Vec3::new(1.0, 0.0, 0.25)).abs() < 1e-15);
        let b = AnalyticShape::cube(0.5);
        assert_eq!(analytic_sdf(&b, Vec3::new(0.0, 0.0, -2.0)), 1.5);
        assert_eq!(analytic_sdf(&b, Vec3::zero()), -0.5);
        let x = Vec3::new(0.3, -0.4, 1.2);
        assert!((s.gradient(x) - x.normalized()).norm() < 1e-15);
        assert!(AnalyticShape::sphere(-1.0).validate().is_err());
    }

    #[test]
    fn surface_samples_lie_on_surface() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let shapes = [
            AnalyticShape::sphere(0.5f64),
            AnalyticShape::Box {
                center: Vec3::new(0.1, 0.0, 0.0),
                half_extents: Vec3::new(0.3, 0.4, 0.5),
            },
            AnalyticShape::torus(0.6, 0.2),
        ];
        for s in shapes {
            for p in s.sample_surface(200, &mut rng) {
                assert!(analytic_sdf(&s, p).abs() < 1e-12, "{s:?} {p:?}");
            }
        }
    }
}
