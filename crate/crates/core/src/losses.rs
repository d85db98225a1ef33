//! Photometric bundle losses and regularizers.

use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, Graph, Tensor, Var};
use crate::geometry::{DistanceMask, PatchSize};
use crate::scalar::Scalar;

type Result<T> = std::result::Result<T, AutodiffError>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub color: f64,
    pub mean: f64,
    pub variance: f64,
    pub conv: f64,
    pub eikonal: f64,
    pub mask: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            color: 1.0,
            mean: 5e-3,
            variance: 1e-2,
            conv: 5e-5,
            eikonal: 0.1,
            mask: 0.0,
        }
    }
}

impl LossWeights {
    pub fn color_only() -> Self {
        Self {
            mean: 0.0,
            variance: 0.0,
            conv: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        let all = [
            ("color", self.color),
            ("mean", self.mean),
            ("variance", self.variance),
            ("conv", self.conv),
            ("eikonal", self.eikonal),
            ("mask", self.mask),
        ];
        for (name, w) in all {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(format!("loss weight {name} must be a finite non-negative number, got {w}"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StatNorm {
    L1,
    #[default]
    L2,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    #[default]
    Sobel,
    Laplace,
}

/// 3×3 correlation taps, one set per response direction.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvKernel {
    pub kind: KernelKind,
    pub taps: Vec<[[f64; 3]; 3]>,
}

impl ConvKernel {
    pub fn new(kind: KernelKind) -> Self {
        let taps = match kind {
            KernelKind::Sobel => vec![
                [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]],
                [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]],
            ],
            KernelKind::Laplace => vec![[[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]]],
        };
        Self { kind, taps }
    }

    pub fn directions(&self) -> usize {
        self.taps.len()
    }

    /// Matrix `[dirs·(rows-2)·(cols-2), rows·cols]` applying the valid
    /// correlation to a row-major patch.
    pub fn matrix<T: Scalar>(&self, size: PatchSize) -> Option<Tensor<T>> {
        let (rows, cols) = (size.rows, size.cols);
        if rows < 3 || cols < 3 {
            return None;
        }
        let (or, oc) = (rows - 2, cols - 2);
        let p = rows * cols;
        let mut m = vec![T::zero(); self.directions() * or * oc * p];
        for (d, taps) in self.taps.iter().enumerate() {
            for i in 0..or {
                for j in 0..oc {
                    let q = (d * or + i) * oc + j;
                    for (a, row) in taps.iter().enumerate() {
                        for (b, &w) in row.iter().enumerate() {
                            m[q * p + (i + a) * cols + (j + b)] = T::lit(w);
                        }
                    }
                }
            }
        }
        Tensor::new(vec![self.directions() * or * oc, p], m).ok()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossOptions {
    pub stat_norm: StatNorm,
    /// Statistics over all bundles pooled instead of per bundle.
    pub pooled: bool,
    pub kernel: KernelKind,
}

impl Default for LossOptions {
    fn default() -> Self {
        Self {
            stat_norm: StatNorm::L2,
            pooled: false,
            kernel: KernelKind::Sobel,
        }
    }
}

/// Ablation arms over loss terms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossArm {
    /// Bundled sampling with the color term only.
    BundleOnly,
    MeanVarL1,
    MeanVarL2,
    Laplace,
    Sobel,
}

impl LossArm {
    pub const ALL: [LossArm; 5] = [
        LossArm::BundleOnly,
        LossArm::MeanVarL1,
        LossArm::MeanVarL2,
        LossArm::Laplace,
        LossArm::Sobel,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Self::BundleOnly => "bundle-only",
            Self::MeanVarL1 => "mean-var-l1",
            Self::MeanVarL2 => "mean-var-l2",
            Self::Laplace => "laplace",
            Self::Sobel => "sobel",
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Self::BundleOnly => "bundle only",
            Self::MeanVarL1 => "M+V l1",
            Self::MeanVarL2 => "M+V l2",
            Self::Laplace => "M+V l2 + Laplace",
            Self::Sobel => "M+V l2 + Sobel",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name() == s)
    }

    /// Weights and options for this arm, keeping `base`'s λ magnitudes.
    pub fn configure(&self, base: &LossWeights) -> (LossWeights, LossOptions) {
        let mut w = *base;
        let mut o = LossOptions::default();
        match self {
            Self::BundleOnly => {
                w.mean = 0.0;
                w.variance = 0.0;
                w.conv = 0.0;
            }
            Self::MeanVarL1 => {
                w.conv = 0.0;
                o.stat_norm = StatNorm::L1;
            }
            Self::MeanVarL2 => w.conv = 0.0,
            Self::Laplace => o.kernel = KernelKind::Laplace,
            Self::Sobel => o.kernel = KernelKind::Sobel,
        }
        (w, o)
    }
}

fn check_same(g: &Graph<impl Scalar>, a: Var, b: Var, op: &'static str) -> Result<()> {
    if g.shape(a) == g.shape(b) {
        Ok(())
    } else {
        Err(AutodiffError::ShapeMismatch {
            op,
            lhs: g.shape(a).to_vec(),
            rhs: g.shape(b).to_vec(),
        })
    }
}

/// Mean absolute error over every pixel and channel.
pub fn color_loss<T: Scalar>(g: &mut Graph<T>, rendered: Var, truth: Var) -> Result<Var> {
    check_same(g, rendered, truth, "color_loss")?;
    let d = g.sub(rendered, truth)?;
    let a = g.abs(d)?;
    g.mean(a)
}

/// Per-channel mean and population variance of a patch.
pub fn patch_stats<T: Scalar>(patch: &[[T; 3]]) -> ([T; 3], [T; 3]) {
    let n = T::lit(patch.len() as f64);
    let mut mean = [T::zero(); 3];
    for px in patch {
        for k in 0..3 {
            mean[k] += px[k];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = [T::zero(); 3];
    for px in patch {
        for k in 0..3 {
            let d = px[k] - mean[k];
            var[k] += d * d;
        }
    }
    var.iter_mut().for_each(|v| *v /= n);
    (mean, var)
}

/// Per-bundle mean and variance `[n, 3]` of colors `[n, P, 3]`.
pub fn bundle_stats<T: Scalar>(g: &mut Graph<T>, colors: Var) -> Result<(Var, Var)> {
    let shape = g.shape(colors).to_vec();
    let (n, p) = match shape[..] {
        [n, p, 3] => (n, p),
        _ => {
            return Err(AutodiffError::Rank {
                op: "bundle_stats",
                expected: 3,
                shape,
            })
        }
    };
    let inv = T::one() / T::lit(p as f64);
    let s = g.sum_axis(colors, 1)?;
    let mean = g.scale(s, inv)?;
    let m3 = g.reshape(mean, &[n, 1, 3])?;
    let d = g.sub(colors, m3)?;
    let d2 = g.square(d)?;
    let v = g.sum_axis(d2, 1)?;
    let var = g.scale(v, inv)?;
    Ok((mean, var))
}

fn pool<T: Scalar>(g: &mut Graph<T>, colors: Var, pooled: bool) -> Result<Var> {
    if !pooled {
        return Ok(colors);
    }
    let s = g.shape(colors).to_vec();
    g.reshape(colors, &[1, s[0] * s[1], 3])
}

fn stat_norm<T: Scalar>(g: &mut Graph<T>, d: Var, norm: StatNorm, n: usize) -> Result<Var> {
    let total = match norm {
        StatNorm::L2 => g.norm2(d)?,
        StatNorm::L1 => {
            let a = g.abs(d)?;
            g.sum(a)?
        }
    };
    g.scale(total, T::one() / T::lit(n as f64))
}

/// `‖M(Ĉ) - M(C)‖ / n` over per-bundle channel means of `[n, P, 3]` colors.
pub fn mean_loss<T: Scalar>(
    g: &mut Graph<T>,
    rendered: Var,
    truth: Var,
    opts: &LossOptions,
) -> Result<Var> {
    check_same(g, rendered, truth, "mean_loss")?;
    let r = pool(g, rendered, opts.pooled)?;
    let t = pool(g, truth, opts.pooled)?;
    let n = g.shape(r)[0];
    let (mr, _) = bundle_stats(g, r)?;
    let (mt, _) = bundle_stats(g, t)?;
    let d = g.sub(mr, mt)?;
    stat_norm(g, d, opts.stat_norm, n)
}

/// As [`mean_loss`] with per-bundle population variances.
pub fn variance_loss<T: Scalar>(
    g: &mut Graph<T>,
    rendered: Var,
    truth: Var,
    opts: &LossOptions,
) -> Result<Var> {
    check_same(g, rendered, truth, "variance_loss")?;
    let r = pool(g, rendered, opts.pooled)?;
    let t = pool(g, truth, opts.pooled)?;
    let n = g.shape(r)[0];
    let (_, vr) = bundle_stats(g, r)?;
    let (_, vt) = bundle_stats(g, t)?;
    let d = g.sub(vr, vt)?;
    stat_norm(g, d, opts.stat_norm, n)
}

/// Valid 3×3 responses of one row-major patch: `[dirs][(rows-2)·(cols-2)][3]`.
pub fn conv_features<T: Scalar>(
    patch: &[[T; 3]],
    size: PatchSize,
    kernel: &ConvKernel,
) -> Option<Vec<Vec<[T; 3]>>> {
    let m = kernel.matrix::<T>(size)?;
    let p = size.pixel_count();
    let q_per = (size.rows - 2) * (size.cols - 2);
    let data = m.data();
    Some(
        (0..kernel.directions())
            .map(|d| {
                (0..q_per)
                    .map(|i| {
                        let row = &data[(d * q_per + i) * p..(d * q_per + i + 1) * p];
                        let mut out = [T::zero(); 3];
                        for (w, px) in row.iter().zip(patch) {
                            for k in 0..3 {
                                out[k] += *w * px[k];
                            }
                        }
                        out
                    })
                    .collect()
            })
            .collect(),
    )
}

/// Central `(rows-2)×(cols-2)` crop of a distance mask, row-major.
pub fn crop_mask(mask: &DistanceMask) -> Vec<bool> {
    mask.interior()
}

/// Masked convolution-feature loss over `[n, P, 3]` colors.
///
/// Returns `None` when the patch is too small for a 3×3 kernel.
pub fn conv_loss<T: Scalar>(
    g: &mut Graph<T>,
    rendered: Var,
    truth: Var,
    masks: &[DistanceMask],
    size: PatchSize,
    kernel: &ConvKernel,
) -> Result<Option<Var>> {
    check_same(g, rendered, truth, "conv_loss")?;
    let Some(k) = kernel.matrix::<T>(size) else {
        return Ok(None);
    };
    let (n, p) = (g.shape(rendered)[0], g.shape(rendered)[1]);
    if p != size.pixel_count() || masks.len() != n {
        return Err(AutodiffError::ShapeMismatch {
            op: "conv_loss",
            lhs: vec![n, p],
            rhs: vec![masks.len(), size.pixel_count()],
        });
    }
    let q_per = (size.rows - 2) * (size.cols - 2);
    let q = k.shape()[0];
    let kv = g.constant(k);
    let flatten = |g: &mut Graph<T>, c: Var| -> Result<Var> {
        let t = g.permute(c, &[1, 0, 2])?;
        g.reshape(t, &[p, 3 * n])
    };
    let r = flatten(g, rendered)?;
    let t = flatten(g, truth)?;
    let fr = g.matmul(kv, r)?;
    let ft = g.matmul(kv, t)?;
    let d = g.sub(fr, ft)?;
    let crops: Vec<Vec<bool>> = masks.iter().map(crop_mask).collect();
    let mut mdata = Vec::with_capacity(q * 3 * n);
    for row in 0..q {
        let cell = row % q_per;
        for crop in &crops {
            let v = if crop[cell] { T::one() } else { T::zero() };
            mdata.extend([v, v, v]);
        }
    }
    let mv = g.constant(Tensor::new(vec![q, 3 * n], mdata)?);
    let md = g.mul(d, mv)?;
    let norm = g.norm2(md)?;
    Ok(Some(g.scale(norm, T::one() / T::lit(n as f64))?))
}

/// `mean (‖∇f‖ - 1)²` over gradient rows `[P, 3]`.
pub fn eikonal_loss<T: Scalar>(g: &mut Graph<T>, gradients: Var) -> Result<Var> {
    let sq = g.square(gradients)?;
    let s = g.sum_axis(sq, 1)?;
    let norm = g.sqrt(s)?;
    let d = g.add_scalar(norm, -T::one())?;
    let d2 = g.square(d)?;
    g.mean(d2)
}

/// Binary cross-entropy between rendered opacity `1 - T_final` and a mask.
pub fn mask_loss<T: Scalar>(g: &mut Graph<T>, t_final: Var, mask: &[bool]) -> Result<Var> {
    let n = g.shape(t_final)[0];
    if mask.len() != n {
        return Err(AutodiffError::ShapeMismatch {
            op: "mask_loss",
            lhs: vec![n],
            rhs: vec![mask.len()],
        });
    }
    let eps = T::lit(1e-5);
    let op = g.neg(t_final)?;
    let op = g.add_scalar(op, T::one())?;
    let op = g.clamp(op, eps, T::one() - eps)?;
    let m: Vec<T> = mask.iter().map(|&b| if b { T::one() } else { T::zero() }).collect();
    let mv = g.constant(Tensor::from_vec(m.clone()));
    let om = g.constant(Tensor::from_vec(m.iter().map(|&v| T::one() - v).collect()));
    let l1 = g.log(op)?;
    let a = g.mul(mv, l1)?;
    let inv = g.neg(op)?;
    let inv = g.add_scalar(inv, T::one())?;
    let l2 = g.log(inv)?;
    let b = g.mul(om, l2)?;
    let s = g.add(a, b)?;
    let m = g.mean(s)?;
    g.neg(m)
}

/// Graph handles of the individual terms; absent terms count as zero.
#[derive(Clone, Copy, Debug, Default)]
pub struct LossTerms {
    pub color: Option<Var>,
    pub mean: Option<Var>,
    pub variance: Option<Var>,
    pub conv: Option<Var>,
    pub eikonal: Option<Var>,
    pub mask: Option<Var>,
}

/// Plain values of every term and the weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub c: f64,
    pub m: f64,
    pub v: f64,
    pub conv: f64,
    pub eik: f64,
    pub mask_term: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [self.c, self.m, self.v, self.conv, self.eik, self.mask_term, self.total]
            .iter()
            .all(|v| v.is_finite())
    }

    /// `Σ λ_k · term_k`.
    pub fn weighted_sum(&self, w: &LossWeights) -> f64 {
        w.color * self.c
            + w.mean * self.m
            + w.variance * self.v
            + w.conv * self.conv
            + w.eikonal * self.eik
            + w.mask * self.mask_term
    }
}

/// Weighted total on the graph, plus the plain breakdown.
pub fn total_loss<T: Scalar>(
    g: &mut Graph<T>,
    terms: &LossTerms,
    weights: &LossWeights,
) -> Result<(Var, LossBreakdown)> {
    let parts = [
        (terms.color, weights.color),
        (terms.mean, weights.mean),
        (terms.variance, weights.variance),
        (terms.conv, weights.conv),
        (terms.eikonal, weights.eikonal),
        (terms.mask, weights.mask),
    ];
    let mut total: Option<Var> = None;
    for (term, w) in parts {
        let Some(v) = term else { continue };
        if w == 0.0 {
            continue;
        }
        let s = g.scale(v, T::lit(w))?;
        total = Some(match total {
            Some(t) => g.add(t, s)?,
            None => s,
        });
    }
    let total = match total {
        Some(t) => t,
        None => g.constant(Tensor::scalar(T::zero())),
    };
    let val = |t: Option<Var>| t.map_or(0.0, |v| g.value(v).item().to_f64_lossy());
    let breakdown = LossBreakdown {
        c: val(terms.color),
        m: val(terms.mean),
        v: val(terms.variance),
        conv: val(terms.conv),
        eik: val(terms.eikonal),
        mask_term: val(terms.mask),
        total: g.value(total).item().to_f64_lossy(),
    };
    Ok((total, breakdown))
}

#[cfg(test)]
mod tests {
    use super::*;

    type F = f64;

    fn bundles(g: &mut Graph<F>, n: usize, p: usize, f: impl Fn(usize, usize, usize) -> F) -> Var {
        let mut d = Vec::new();
        for b in 0..n {
            for i in 0..p {
                for k in 0..3 {
                    d.push(f(b, i, k));
                }
            }
        }
        g.constant(Tensor::new(vec![n, p, 3], d).unwrap())
    }

    #[test]
    fn color_loss_examples() {
        let mut g = Graph::new();
        let t = bundles(&mut g, 2, 9, |b, i, k| 0.1 * (b + i + k) as F / 20.0);
        let r = bundles(&mut g, 2, 9, |b, i, k| 0.1 * (b + i + k) as F / 20.0 + 0.1);
        let z = color_loss(&mut g, t, t).unwrap();
        assert_eq!(g.value(z).item(), 0.0);
        let l = color_loss(&mut g, r, t).unwrap();
        assert!((g.value(l).item() - 0.1).abs() < 1e-12);
        let swapped = bundles(&mut g, 2, 9, |b, i, k| 0.1 * ((1 - b) + i + k) as F / 20.0 + 0.1);
        let ts = bundles(&mut g, 2, 9, |b, i, k| 0.1 * ((1 - b) + i + k) as F / 20.0);
        let l2 = color_loss(&mut g, swapped, ts).unwrap();
        assert!((g.value(l2).item() - g.value(l).item()).abs() < 1e-15);
    }

    #[test]
    fn patch_stats_examples() {
        let constant: Vec<[F; 3]> = vec![[0.3, 0.6, 0.9]; 9];
        let (m, v) = patch_stats(&constant);
        assert!(m.iter().zip([0.3, 0.6, 0.9]).all(|(a, b)| (a - b).abs() < 1e-15));
        assert!(v.iter().all(|&x| x.abs() < 1e-15));
        let ramp: Vec<[F; 3]> = (0..9).map(|i| [i as F / 8.0; 3]).collect();
        assert_eq!(patch_stats(&ramp).0, [0.5; 3]);
        let checker: Vec<[F; 3]> = (0..9).map(|i| [((i + 1) % 2) as F; 3]).collect();
        let (m, v) = patch_stats(&checker);
        assert!((m[0] - 5.0 / 9.0).abs() < 1e-15);
        assert!((v[0] - 20.0 / 81.0).abs() < 1e-15);
    }

    #[test]
    fn mean_and_variance_loss_examples() {
        let opts = LossOptions::default();
        let mut g = Graph::new();
        let t = bundles(&mut g, 3, 9, |b, i, k| ((b * 7 + i * 3 + k) % 5) as F / 5.0);
        let shifted = bundles(&mut g, 3, 9, |b, i, k| ((b * 7 + i * 3 + k) % 5) as F / 5.0 + 0.2);
        let m0 = mean_loss(&mut g, t, t, &opts).unwrap();
        let v0 = variance_loss(&mut g, t, t, &opts).unwrap();
        assert_eq!((g.value(m0).item(), g.value(v0).item()), (0.0, 0.0));
        let ms = mean_loss(&mut g, shifted, t, &opts).unwrap();
        let vs = variance_loss(&mut g, shifted, t, &opts).unwrap();
        assert!(g.value(ms).item() > 0.0);
        assert!(g.value(vs).item().abs() < 1e-12);
        // scale by two around each bundle's own mean
        let (means, _) = {
            let (m, v) = bundle_stats(&mut g, t).unwrap();
            (g.value(m).clone(), v)
        };
        let md = means.data().to_vec();
        let tv = g.value(t).clone();
        let scaled: Vec<F> = tv
            .data()
            .chunks(27)
            .enumerate()
            .flat_map(|(b, ch)| {
                let md = &md;
                ch.chunks(3)
                    .flat_map(move |px| (0..3).map(move |k| md[b * 3 + k] + 2.0 * (px[k] - md[b * 3 + k])))
                    .collect::<Vec<_>>()
            })
            .collect();
        let sv = g.constant(Tensor::new(vec![3, 9, 3], scaled).unwrap());
        let mm = mean_loss(&mut g, sv, t, &opts).unwrap();
        let vv = variance_loss(&mut g, sv, t, &opts).unwrap();
        assert!(g.value(mm).item().abs() < 1e-12);
        assert!(g.value(vv).item() > 0.0);
    }

    #[test]
    fn conv_feature_examples() {
        let size = PatchSize::square(3);
        let sobel = ConvKernel::new(KernelKind::Sobel);
        let constant: Vec<[F; 3]> = vec![[0.7; 3]; 9];
        let f = conv_features(&constant, size, &sobel).unwrap();
        assert!(f.iter().flatten().all(|c| c.iter().all(|&v| v.abs() < 1e-12)));
        let ramp: Vec<[F; 3]> = (0..9).map(|i| [(i % 3) as F; 3]).collect();
        let f = conv_features(&ramp, size, &sobel).unwrap();
        assert_eq!(f[0][0], [8.0; 3]);
        assert_eq!(f[1][0], [0.0; 3]);
        assert!(conv_features(&ramp[..4], PatchSize::square(2), &sobel).is_none());
        for k in [KernelKind::Sobel, KernelKind::Laplace] {
            for taps in ConvKernel::new(k).taps {
                assert_eq!(taps.iter().flatten().sum::<F>(), 0.0);
            }
        }
    }

    #[test]
    fn conv_loss_examples() {
        let size = PatchSize::square(3);
        let sobel = ConvKernel::new(KernelKind::Sobel);
        let mut g = Graph::new();
        let t = bundles(&mut g, 1, 9, |_, _, _| 0.0);
        // one channel ramp gives a Gx difference of 8 on channel 0 only
        let r = bundles(&mut g, 1, 9, |_, i, k| if k == 0 { (i % 3) as F } else { 0.0 });
        let ones = vec![DistanceMask::all(3, 3, true)];
        let l = conv_loss(&mut g, r, t, &ones, size, &sobel).unwrap().unwrap();
        assert!((g.value(l).item() - 8.0).abs() < 1e-12);
        let zeros = vec![DistanceMask::all(3, 3, false)];
        let l0 = conv_loss(&mut g, r, t, &zeros, size, &sobel).unwrap().unwrap();
        assert_eq!(g.value(l0).item(), 0.0);
        let same = conv_loss(&mut g, r, r, &ones, size, &sobel).unwrap().unwrap();
        assert_eq!(g.value(same).item(), 0.0);
    }

    #[test]
    fn eikonal_examples() {
        let mut g = Graph::new();
        let unit = g.constant(Tensor::new(vec![2, 3], vec![1.0f64, 0.0, 0.0, 0.0, 0.6, 0.8]).unwrap());
        let e = eikonal_loss(&mut g, unit).unwrap();
        assert!(g.value(e).item().abs() < 1e-15);
        let doubled = g.scale(unit, 2.0).unwrap();
        let e2 = eikonal_loss(&mut g, doubled).unwrap();
        assert!((g.value(e2).item() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn total_loss_examples() {
        let w = LossWeights::default();
        assert_eq!((w.color, w.mean, w.variance, w.conv), (1.0, 5e-3, 1e-2, 5e-5));
        let mut g: Graph<F> = Graph::new();
        let c = g.constant(Tensor::scalar(0.3));
        let m = g.constant(Tensor::scalar(0.2));
        let terms = LossTerms {
            color: Some(c),
            mean: Some(m),
            ..Default::default()
        };
        let (_, b) = total_loss(&mut g, &terms, &LossWeights::color_only()).unwrap();
        assert_eq!(b.total, 0.3);
        let (_, b) = total_loss(&mut g, &terms, &w).unwrap();
        assert!((b.total - b.weighted_sum(&w)).abs() < 1e-12);
        let (_, z) = total_loss(&mut g, &LossTerms::default(), &w).unwrap();
        assert_eq!(z.total, 0.0);
        let (bw, _) = LossArm::BundleOnly.configure(&w);
        assert_eq!((bw.mean, bw.variance, bw.conv), (0.0, 0.0, 0.0));
    }

    #[test]
    fn mask_loss_is_small_for_matching_opacity() {
        let mut g: Graph<F> = Graph::new();
        let tf = g.constant(Tensor::from_vec(vec![1e-6, 1.0 - 1e-6]));
        let good = mask_loss(&mut g, tf, &[true, false]).unwrap();
        let bad = mask_loss(&mut g, tf, &[false, true]).unwrap();
        assert!(g.value(good).item() < 1e-4);
        assert!(g.value(bad).item() > 5.0);
    }
}
