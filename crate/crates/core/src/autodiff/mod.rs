//! Minimal reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Graph`] is rebuilt for each evaluation (define-by-run). Gradients of
//! gradients, needed by the eikonal regularizer and the color network's
//! normal input, are obtained by propagating forward-mode tangents through
//! the network as ordinary graph operations (see [`crate::fields`]), so the
//! reverse sweep itself is first order.

mod graph;
pub mod kernels;
mod tensor;

pub use graph::{Gradients, Graph, Var};
pub use tensor::Tensor;

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AutodiffError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("{op}: axis {axis} invalid for shape {shape:?}")]
    Axis {
        op: &'static str,
        axis: usize,
        shape: Vec<usize>,
    },
    #[error("{op}: index {index} out of range for length {len}")]
    Index {
        op: &'static str,
        index: usize,
        len: usize,
    },
    #[error("permutation {perm:?} invalid for shape {shape:?}")]
    Permutation { perm: Vec<usize>, shape: Vec<usize> },
    #[error("{op}: domain error ({detail})")]
    Domain { op: &'static str, detail: String },
    #[error("{op}: no inputs")]
    Empty { op: &'static str },
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("backward seed must be a single value, got shape {shape:?}")]
    NonScalarSeed { shape: Vec<usize> },
}

/// Compares reverse-mode gradients of `f` at `x` against central differences.
///
/// Returns `max_i |analytic_i - numeric_i| / max(1, |analytic_i|)`.
pub fn grad_check<T, F>(f: F, x: &Tensor<T>, eps: T) -> Result<T, AutodiffError>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, Var) -> Result<Var, AutodiffError>,
{
    let mut g = Graph::new();
    let xv = g.param(x.clone());
    let out = f(&mut g, xv)?;
    let grads = g.backward(out)?;
    let analytic = grads
        .wrt(xv)
        .map(|t| t.data().to_vec())
        .unwrap_or_else(|| vec![T::zero(); x.len()]);

    let eval = |probe: Tensor<T>| -> Result<T, AutodiffError> {
        let mut g = Graph::new();
        let v = g.constant(probe);
        let out = f(&mut g, v)?;
        Ok(g.value(out).item())
    };

    let two = T::lit(2.0);
    let mut worst = T::zero();
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus.data_mut()[i] += eps;
        let mut minus = x.clone();
        minus.data_mut()[i] -= eps;
        let numeric = (eval(plus)? - eval(minus)?) / (two * eps);
        let err = (analytic[i] - numeric).abs() / analytic[i].abs().max(T::one());
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests;
