use crate::scalar::{self, Scalar};

use super::kernels;
use super::tensor::{self, broadcast_shape, expand, reduce_to, zip_broadcast, Tensor};
use super::AutodiffError;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    id: usize,
}

impl Var {
    pub fn id(self) -> usize {
        self.id
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// Product with the right operand repeated along axis 0.
    MulTiled(Var, Var),
    Div(Var, Var),
    MatMul(Var, Var),
    Sum(Var),
    Mean(Var),
    SumAxis(Var, usize),
    Relu(Var),
    Softplus(Var),
    /// `(softplus(βx) - ln 2)/β`; `slope` holds `sigmoid(βx)`.
    ShiftedSoftplus { x: Var, slope: Var },
    /// `sigmoid(βx)`.
    SoftplusSlope(Var, T),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Sin(Var),
    Cos(Var),
    Sqrt(Var),
    Abs(Var),
    Pow(Var, T),
    Scale(Var, T),
    Shift(Var),
    Clamp(Var, T, T),
    Concat(Vec<Var>, usize),
    Slice { x: Var, axis: usize, start: usize },
    Broadcast(Var),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Gather(Var, Vec<usize>),
    CumsumExclusive(Var),
}

#[derive(Clone, Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Define-by-run tape for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so every operation's inputs have
/// smaller ids than the operation itself.
#[derive(Clone, Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients of one scalar seed with respect to every node that depends on a
/// parameter.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.id).and_then(|g| g.as_ref())
    }

    /// Bytes held by retained gradients.
    pub fn bytes(&self) -> usize {
        self.grads.iter().flatten().map(|g| g.len()).sum::<usize>() * std::mem::size_of::<T>()
    }
}

type Result<T> = std::result::Result<T, AutodiffError>;

fn rank2(op: &'static str, shape: &[usize]) -> Result<(usize, usize)> {
    match shape {
        [r, c] => Ok((*r, *c)),
        _ => Err(AutodiffError::Rank {
            op,
            expected: 2,
            shape: shape.to_vec(),
        }),
    }
}

/// Splits a shape around `axis` into (outer, extent, inner).
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Bytes held by node values on the tape.
    pub fn value_bytes(&self) -> usize {
        self.nodes.iter().map(|n| n.value.len()).sum::<usize>() * std::mem::size_of::<T>()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.id].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.id].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.id].requires_grad
    }

    /// Input ids of a node, in operand order.
    pub fn inputs(&self, v: Var) -> Vec<Var> {
        match &self.nodes[v.id].op {
            Op::Leaf => Vec::new(),
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::MulTiled(a, b)
            | Op::Div(a, b)
            | Op::MatMul(a, b) => {
                vec![*a, *b]
            }
            Op::Concat(xs, _) => xs.clone(),
            Op::Sum(x)
            | Op::Mean(x)
            | Op::SumAxis(x, _)
            | Op::Relu(x)
            | Op::Softplus(x)
            | Op::ShiftedSoftplus { x, .. }
            | Op::SoftplusSlope(x, _)
            | Op::Sigmoid(x)
            | Op::Exp(x)
            | Op::Log(x)
            | Op::Sin(x)
            | Op::Cos(x)
            | Op::Sqrt(x)
            | Op::Abs(x)
            | Op::Pow(x, _)
            | Op::Scale(x, _)
            | Op::Shift(x)
            | Op::Clamp(x, _, _)
            | Op::Slice { x, .. }
            | Op::Broadcast(x)
            | Op::Reshape(x)
            | Op::Permute(x, _)
            | Op::Gather(x, _)
            | Op::CumsumExclusive(x) => vec![*x],
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        let id = self.nodes.len();
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var { id }
    }

    fn any_grad(&self, vs: &[Var]) -> bool {
        vs.iter().any(|v| self.nodes[v.id].requires_grad)
    }

    /// A leaf that is not differentiated.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf whose gradient is collected by [`Graph::backward`].
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Copies the value of `x` into a fresh constant, cutting the gradient.
    pub fn detach(&mut self, x: Var) -> Var {
        let value = self.value(x).clone();
        self.constant(value)
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let out_shape = broadcast_shape(sa, sb).ok_or_else(|| AutodiffError::ShapeMismatch {
            op: name,
            lhs: sa.to_vec(),
            rhs: sb.to_vec(),
        })?;
        let data = zip_broadcast(
            self.value(a).data(),
            sa,
            self.value(b).data(),
            sb,
            &out_shape,
            f,
        );
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::from_parts(out_shape, data), op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(b).data().iter().any(|&v| v == T::zero()) {
            return Err(AutodiffError::Domain {
                op: "div",
                detail: "division by zero".into(),
            });
        }
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = rank2("matmul", self.shape(a))?;
        let (k2, n) = rank2("matmul", self.shape(b))?;
        if k != k2 {
            return Err(AutodiffError::ShapeMismatch {
                op: "matmul",
                lhs: vec![m, k],
                rhs: vec![k2, n],
            });
        }
        let data = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::from_parts(vec![m, n], data), Op::MatMul(a, b), rg))
    }

    /// Sum of all elements, as a zero-dimensional tensor.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s: T = self.value(x).data().iter().copied().sum();
        let rg = self.any_grad(&[x]);
        Ok(self.push(Tensor::scalar(s), Op::Sum(x), rg))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        if n == 0 {
            return Err(AutodiffError::Domain {
                op: "mean",
                detail: "mean of empty tensor".into(),
            });
        }
        let s: T = self.value(x).data().iter().copied().sum();
        let rg = self.any_grad(&[x]);
        Ok(self.push(Tensor::scalar(s / T::lit(n as f64)), Op::Mean(x), rg))
    }

    /// Sums over `axis`, removing it from the shape.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(AutodiffError::Axis {
                op: "sum_axis",
                axis,
                shape,
            });
        }
        let (outer, ext, inner) = split_axis(&shape, axis);
        let src = self.value(x).data();
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            let dst = &mut out[o * inner..(o + 1) * inner];
            for e in 0..ext {
                let base = (o * ext + e) * inner;
                for (d, &s) in dst.iter_mut().zip(&src[base..base + inner]) {
                    *d += s;
                }
            }
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        let rg = self.any_grad(&[x]);
        Ok(self.push(Tensor::from_parts(out_shape, out), Op::SumAxis(x, axis), rg))
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let value = self.value(x).map(f);
        let rg = self.any_grad(&[x]);
        self.push(value, op, rg)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        Ok(self.unary(x, |v| v.max(T::zero()), Op::Relu(x)))
    }

    /// `ln(1 + e^x)` in the overflow-free form `max(x,0) + ln(1 + e^{-|x|})`.
    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        Ok(self.unary(x, scalar::softplus, Op::Softplus(x)))
    }

    /// `(softplus(βx) - ln 2)/β` (zero at the origin) and its slope
    /// `sigmoid(βx)`, sharing one exponential per element.
    pub fn shifted_softplus(&mut self, x: Var, beta: T) -> Result<(Var, Var)> {
        if !(beta > T::zero()) {
            return Err(AutodiffError::Domain {
                op: "shifted_softplus",
                detail: format!("beta must be positive, got {beta}"),
            });
        }
        let src = self.value(x).data();
        let (inv, ln2) = (T::one() / beta, T::LN_2());
        let mut h = Vec::with_capacity(src.len());
        let mut slope = Vec::with_capacity(src.len());
        for &v in src {
            let bx = v * beta;
            let e = (-bx.abs()).exp();
            let l1p = if e < T::lit(1e-8) { e - T::lit(0.5) * e * e } else { e.ln_1p() };
            h.push((bx.max(T::zero()) + l1p - ln2) * inv);
            slope.push(if bx >= T::zero() { T::one() / (T::one() + e) } else { e / (T::one() + e) });
        }
        let shape = self.shape(x).to_vec();
        let rg = self.any_grad(&[x]);
        let s = self.push(Tensor::from_parts(shape.clone(), slope), Op::SoftplusSlope(x, beta), rg);
        let h = self.push(Tensor::from_parts(shape, h), Op::ShiftedSoftplus { x, slope: s }, rg);
        Ok((h, s))
    }

    /// `a * b` where `b` is repeated along axis 0 to cover `a`
    /// (`a: [k·m, ...]`, `b: [m, ...]`).
    pub fn mul_tiled(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let ok = !sa.is_empty()
            && sa.len() == sb.len()
            && sa[1..] == sb[1..]
            && sb[0] > 0
            && sa[0] % sb[0] == 0;
        if !ok {
            return Err(AutodiffError::ShapeMismatch {
                op: "mul_tiled",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let bd = self.value(b).data();
        let mut out = Vec::with_capacity(self.value(a).len());
        for chunk in self.value(a).data().chunks(bd.len()) {
            out.extend(chunk.iter().zip(bd).map(|(&x, &y)| x * y));
        }
        let shape = sa.to_vec();
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::from_parts(shape, out), Op::MulTiled(a, b), rg))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        Ok(self.unary(x, scalar::sigmoid, Op::Sigmoid(x)))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        Ok(self.unary(x, |v| v.exp(), Op::Exp(x)))
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        if let Some(&bad) = self.value(x).data().iter().find(|&&v| !(v > T::zero())) {
            return Err(AutodiffError::Domain {
                op: "log",
                detail: format!("non-positive input {bad}"),
            });
        }
        Ok(self.unary(x, |v| v.ln(), Op::Log(x)))
    }

    pub fn sin(&mut self, x: Var) -> Result<Var> {
        Ok(self.unary(x, |v| v.sin(), Op::Sin(x)))
    }

    pub fn cos(&mut self, x: Var) -> Result<Var> {
        Ok(self.unary(x, |v| v.cos(), Op::Cos(x)))
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        if let Some(&bad) = self.value(x).data().iter().find(|&&v| v < T::zero()) {
            return Err(AutodiffError::Domain {
                op: "sqrt",
                detail: format!("negative input {bad}"),
            });
        }
        Ok(self.unary(x, |v| v.sqrt(), Op::Sqrt(x)))
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        Ok(self.unary(x, |v| v.abs(), Op::Abs(x)))
    }

    /// Elementwise power with a constant exponent.
    pub fn pow(&mut self, x: Var, p: T) -> Result<Var> {
        let needs_positive = p.fract() != T::zero();
        if needs_positive {
            if let Some(&bad) = self.value(x).data().iter().find(|&&v| v < T::zero()) {
                return Err(AutodiffError::Domain {
                    op: "pow",
                    detail: format!("negative base {bad} with fractional exponent {p}"),
                });
            }
        }
        Ok(self.unary(x, |v| v.powf(p), Op::Pow(x, p)))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Result<Var> {
        Ok(self.unary(x, |v| v * c, Op::Scale(x, c)))
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.scale(x, -T::one())
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Result<Var> {
        Ok(self.unary(x, |v| v + c, Op::Shift(x)))
    }

    /// Clamps into `[lo, hi]`; the gradient passes only strictly inside.
    pub fn clamp(&mut self, x: Var, lo: T, hi: T) -> Result<Var> {
        Ok(self.unary(x, |v| v.max(lo).min(hi), Op::Clamp(x, lo, hi)))
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.mul(x, x)
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = xs.first().ok_or(AutodiffError::Empty { op: "concat" })?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(AutodiffError::Axis {
                op: "concat",
                axis,
                shape: base,
            });
        }
        let mut total = 0;
        for &x in xs {
            let s = self.shape(x);
            let ok = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(AutodiffError::ShapeMismatch {
                    op: "concat",
                    lhs: base.clone(),
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &x in xs {
                let ext = self.shape(x)[axis];
                let src = self.value(x).data();
                out.extend_from_slice(&src[o * ext * inner..(o + 1) * ext * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = self.any_grad(xs);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Concat(xs.to_vec(), axis), rg))
    }

    /// Elements `start..end` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start > end || end > shape[axis] {
            return Err(AutodiffError::Axis {
                op: "slice",
                axis,
                shape,
            });
        }
        let (outer, ext, inner) = split_axis(&shape, axis);
        let src = self.value(x).data();
        let len = end - start;
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * ext + start) * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let rg = self.any_grad(&[x]);
        Ok(self.push(
            Tensor::from_parts(out_shape, out),
            Op::Slice { x, axis, start },
            rg,
        ))
    }

    /// Explicit broadcast to `shape` under numpy rules.
    pub fn broadcast(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if broadcast_shape(&s, shape).as_deref() != Some(shape) {
            return Err(AutodiffError::ShapeMismatch {
                op: "broadcast",
                lhs: s,
                rhs: shape.to_vec(),
            });
        }
        let data = expand(self.value(x).data(), &s, shape);
        let rg = self.any_grad(&[x]);
        Ok(self.push(Tensor::from_parts(shape.to_vec(), data), Op::Broadcast(x), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshaped(shape.to_vec())?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        let valid = perm.len() == shape.len()
            && perm
                .iter()
                .all(|&p| p < shape.len() && !std::mem::replace(&mut seen[p], true));
        if !valid {
            return Err(AutodiffError::Permutation {
                perm: perm.to_vec(),
                shape,
            });
        }
        let (data, out_shape) = tensor::permute(self.value(x).data(), &shape, perm);
        let rg = self.any_grad(&[x]);
        Ok(self.push(
            Tensor::from_parts(out_shape, data),
            Op::Permute(x, perm.to_vec()),
            rg,
        ))
    }

    /// Selects rows (entries along axis 0) by index; repeats are allowed.
    pub fn gather(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let rows = *shape.first().ok_or(AutodiffError::Empty { op: "gather" })?;
        if let Some(&bad) = index.iter().find(|&&i| i >= rows) {
            return Err(AutodiffError::Index {
                op: "gather",
                index: bad,
                len: rows,
            });
        }
        let row_len: usize = shape[1..].iter().product();
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(index.len() * row_len);
        for &i in index {
            out.extend_from_slice(&src[i * row_len..(i + 1) * row_len]);
        }
        let mut out_shape = shape;
        out_shape[0] = index.len();
        let rg = self.any_grad(&[x]);
        Ok(self.push(
            Tensor::from_parts(out_shape, out),
            Op::Gather(x, index.to_vec()),
            rg,
        ))
    }

    /// `y_i = Σ_{j<i} x_j` along the last axis.
    pub fn cumsum_exclusive(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let last = *shape.last().ok_or(AutodiffError::Empty {
            op: "cumsum_exclusive",
        })?;
        let src = self.value(x).data();
        let mut out = vec![T::zero(); src.len()];
        if last > 0 {
            for (o, s) in out.chunks_mut(last).zip(src.chunks(last)) {
                let mut acc = T::zero();
                for (ov, &sv) in o.iter_mut().zip(s) {
                    *ov = acc;
                    acc += sv;
                }
            }
        }
        let rg = self.any_grad(&[x]);
        Ok(self.push(Tensor::from_parts(shape, out), Op::CumsumExclusive(x), rg))
    }

    /// Euclidean norm of all elements; the subgradient at zero is zero.
    pub fn norm2(&mut self, x: Var) -> Result<Var> {
        let sq = self.mul(x, x)?;
        let s = self.sum(sq)?;
        self.sqrt(s)
    }

    /// Reverse sweep from a scalar `seed`.
    pub fn backward(&self, seed: Var) -> Result<Gradients<T>> {
        let seed_value = self.value(seed);
        if seed_value.len() != 1 {
            return Err(AutodiffError::NonScalarSeed {
                shape: seed_value.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; seed.id + 1];
        grads[seed.id] = Some(Tensor::full(seed_value.shape(), T::one()));
        for id in (0..=seed.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if node.requires_grad {
                self.propagate(node, &g, &mut grads);
            }
            grads[id] = Some(g);
        }
        for (id, g) in grads.iter_mut().enumerate() {
            if !self.nodes[id].requires_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, data: Vec<T>) {
        if !self.nodes[v.id].requires_grad {
            return;
        }
        match &mut grads[v.id] {
            Some(existing) => {
                for (e, d) in existing.data_mut().iter_mut().zip(data) {
                    *e += d;
                }
            }
            slot @ None => {
                *slot = Some(Tensor::from_parts(self.shape(v).to_vec(), data));
            }
        }
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let gd = g.data();
        let out_shape = g.shape();
        let val = |v: Var| self.value(v).data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, reduce_to(gd, out_shape, self.shape(*a)));
                self.accumulate(grads, *b, reduce_to(gd, out_shape, self.shape(*b)));
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, reduce_to(gd, out_shape, self.shape(*a)));
                let nb: Vec<T> = reduce_to(gd, out_shape, self.shape(*b))
                    .into_iter()
                    .map(|v| -v)
                    .collect();
                self.accumulate(grads, *b, nb);
            }
            Op::Mul(a, b) => {
                if self.requires_grad(*a) {
                    let p = zip_broadcast(gd, out_shape, val(*b), self.shape(*b), out_shape, |x, y| x * y);
                    self.accumulate(grads, *a, reduce_to(&p, out_shape, self.shape(*a)));
                }
                if self.requires_grad(*b) {
                    let p = zip_broadcast(gd, out_shape, val(*a), self.shape(*a), out_shape, |x, y| x * y);
                    self.accumulate(grads, *b, reduce_to(&p, out_shape, self.shape(*b)));
                }
            }
            Op::Div(a, b) => {
                if self.requires_grad(*a) {
                    let p = zip_broadcast(gd, out_shape, val(*b), self.shape(*b), out_shape, |x, y| x / y);
                    self.accumulate(grads, *a, reduce_to(&p, out_shape, self.shape(*a)));
                }
                if self.requires_grad(*b) {
                    // d(a/b)/db = -out / b
                    let go: Vec<T> = gd.iter().zip(node.value.data()).map(|(&x, &y)| -x * y).collect();
                    let p = zip_broadcast(&go, out_shape, val(*b), self.shape(*b), out_shape, |x, y| x / y);
                    self.accumulate(grads, *b, reduce_to(&p, out_shape, self.shape(*b)));
                }
            }
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                if self.requires_grad(*a) {
                    self.accumulate(grads, *a, kernels::matmul_a_bt(gd, val(*b), m, n, k));
                }
                if self.requires_grad(*b) {
                    self.accumulate(grads, *b, kernels::matmul_at_b(val(*a), gd, m, k, n));
                }
            }
            Op::Sum(x) => {
                let n = self.value(*x).len();
                self.accumulate(grads, *x, vec![gd[0]; n]);
            }
            Op::Mean(x) => {
                let n = self.value(*x).len();
                self.accumulate(grads, *x, vec![gd[0] / T::lit(n as f64); n]);
            }
            Op::SumAxis(x, axis) => {
                let (outer, ext, inner) = split_axis(self.shape(*x), *axis);
                let mut out = Vec::with_capacity(outer * ext * inner);
                for o in 0..outer {
                    for _ in 0..ext {
                        out.extend_from_slice(&gd[o * inner..(o + 1) * inner]);
                    }
                }
                self.accumulate(grads, *x, out);
            }
            Op::Relu(x) => {
                let out = gd
                    .iter()
                    .zip(val(*x))
                    .map(|(&g, &v)| if v > T::zero() { g } else { T::zero() })
                    .collect();
                self.accumulate(grads, *x, out);
            }
            Op::Softplus(x) => {
                let out = gd.iter().zip(val(*x)).map(|(&g, &v)| g * scalar::sigmoid(v)).collect();
                self.accumulate(grads, *x, out);
            }
            Op::ShiftedSoftplus { x, slope } => {
                let out = gd.iter().zip(val(*slope)).map(|(&g, &s)| g * s).collect();
                self.accumulate(grads, *x, out);
            }
            Op::SoftplusSlope(x, beta) => {
                let out = gd
                    .iter()
                    .zip(node.value.data())
                    .map(|(&g, &y)| g * *beta * y * (T::one() - y))
                    .collect();
                self.accumulate(grads, *x, out);
            }
            Op::MulTiled(a, b) => {
                let (ad, bd) = (val(*a), val(*b));
                if self.requires_grad(*a) {
                    let mut out = Vec::with_capacity(gd.len());
                    for chunk in gd.chunks(bd.len()) {
                        out.extend(chunk.iter().zip(bd).map(|(&g, &y)| g * y));
                    }
                    self.accumulate(grads, *a, out);
                }
                if self.requires_grad(*b) {
                    let mut out = vec![T::zero(); bd.len()];
                    for (gc, ac) in gd.chunks(bd.len()).zip(ad.chunks(bd.len())) {
                        for ((o, &g), &x) in out.iter_mut().zip(gc).zip(ac) {
                            *o += g * x;
                        }
                    }
                    self.accumulate(grads, *b, out);
                }
            }
            Op::Sigmoid(x) => {
                let out = gd
                    .iter()
                    .zip(node.value.data())
                    .map(|(&g, &y)| g * y * (T::one() - y))
                    .collect();
                self.accumulate(grads, *x, out);
            }
            Op::Exp(x) => {
                let out = gd.iter().zip(node.value.data()).map(|(&g, &y)| g * y).collect();
                self.accumulate(grads, *x, out);
            }
            Op::Log(x) => {
                let out = gd.iter().zip(val(*x)).map(|(&g, &v)| g / v).collect();
                self.accumulate(grads, *x, out);
            }
            Op::Sin(x) => {
                let out = gd.iter().zip(val(*x)).map(|(&g, &v)| g * v.cos()).collect();
                self.accumulate(grads, *x, out);
            }
            Op::Cos(x) => {
                let out = gd.iter().zip(val(*x)).map(|(&g, &v)| -g * v.sin()).collect();
                self.accumulate(grads, *x, out);
            }
            Op::Sqrt(x) => {
                let two = T::lit(2.0);
                let out = gd
                    .iter()
                    .zip(node.value.data())
                    .map(|(&g, &y)| if y > T::zero() { g / (two * y) } else { T::zero() })
                    .collect();
                self.accumulate(grads, *x, out);
            }
            Op::Abs(x) => {
                let out = gd
                    .iter()
                    .zip(val(*x))
                    .map(|(&g, &v)| {
                        if v > T::zero() {
                            g
                        } else if v < T::zero() {
                            -g
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                self.accumulate(grads, *x, out);
            }
            Op::Pow(x, p) => {
                let pm1 = *p - T::one();
                let out = gd
                    .iter()
                    .zip(val(*x))
                    .map(|(&g, &v)| g * *p * v.powf(pm1))
                    .collect();
                self.accumulate(grads, *x, out);
            }
            Op::Scale(x, c) => {
                let out = gd.iter().map(|&g| g * *c).collect();
                self.accumulate(grads, *x, out);
            }
            Op::Shift(x) => self.accumulate(grads, *x, gd.to_vec()),
            Op::Clamp(x, lo, hi) => {
                let out = gd
                    .iter()
                    .zip(val(*x))
                    .map(|(&g, &v)| if v > *lo && v < *hi { g } else { T::zero() })
                    .collect();
                self.accumulate(grads, *x, out);
            }
            Op::Concat(xs, axis) => {
                let (outer, total, inner) = split_axis(out_shape, *axis);
                let mut offset = 0;
                for &x in xs {
                    let ext = self.shape(x)[*axis];
                    if self.requires_grad(x) {
                        let mut part = Vec::with_capacity(outer * ext * inner);
                        for o in 0..outer {
                            let base = (o * total + offset) * inner;
                            part.extend_from_slice(&gd[base..base + ext * inner]);
                        }
                        self.accumulate(grads, x, part);
                    }
                    offset += ext;
                }
            }
            Op::Slice { x, axis, start } => {
                let (outer, ext, inner) = split_axis(self.shape(*x), *axis);
                let len = out_shape[*axis];
                let mut out = vec![T::zero(); outer * ext * inner];
                for o in 0..outer {
                    let dst = (o * ext + start) * inner;
                    out[dst..dst + len * inner]
                        .copy_from_slice(&gd[o * len * inner..(o + 1) * len * inner]);
                }
                self.accumulate(grads, *x, out);
            }
            Op::Broadcast(x) => {
                self.accumulate(grads, *x, reduce_to(gd, out_shape, self.shape(*x)));
            }
            Op::Reshape(x) => self.accumulate(grads, *x, gd.to_vec()),
            Op::Permute(x, perm) => {
                let mut inverse = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inverse[p] = i;
                }
                let (out, _) = tensor::permute(gd, out_shape, &inverse);
                self.accumulate(grads, *x, out);
            }
            Op::Gather(x, index) => {
                let row_len: usize = out_shape[1..].iter().product();
                let mut out = vec![T::zero(); self.value(*x).len()];
                for (r, &i) in index.iter().enumerate() {
                    let dst = &mut out[i * row_len..(i + 1) * row_len];
                    for (d, &s) in dst.iter_mut().zip(&gd[r * row_len..(r + 1) * row_len]) {
                        *d += s;
                    }
                }
                self.accumulate(grads, *x, out);
            }
            Op::CumsumExclusive(x) => {
                let last = *out_shape.last().unwrap_or(&1);
                let mut out = vec![T::zero(); gd.len()];
                if last > 0 {
                    for (o, s) in out.chunks_mut(last).zip(gd.chunks(last)) {
                        let mut acc = T::zero();
                        for j in (0..last).rev() {
                            o[j] = acc;
                            acc += s[j];
                        }
                    }
                }
                self.accumulate(grads, *x, out);
            }
        }
    }
}
