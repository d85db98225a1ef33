use crate::scalar::Scalar;

use super::AutodiffError;

/// Dense row-major n-dimensional array.
///
/// A `Tensor` carries no graph identity; it becomes part of a differentiation
/// graph only when handed to [`super::Graph::constant`] or
/// [`super::Graph::param`].
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self, AutodiffError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(AutodiffError::DataLength {
                shape,
                len: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    /// Builds a tensor whose length is known to match; used by the ops.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    /// Zero-dimensional tensor holding one value.
    pub fn scalar(value: T) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn from_vec(data: Vec<T>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<T>) -> Result<Self, AutodiffError> {
        Self::new(vec![rows, cols], data)
    }

    pub fn eye(n: usize) -> Self {
        let mut data = vec![T::zero(); n * n];
        for i in 0..n {
            data[i * n + i] = T::one();
        }
        Self::from_parts(vec![n, n], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn reshaped(mut self, shape: Vec<usize>) -> Result<Self, AutodiffError> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(AutodiffError::DataLength {
                shape,
                len: self.data.len(),
            });
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }
}

/// Numpy-style broadcast of two shapes (trailing alignment).
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = if da == db {
            da
        } else if da == 1 {
            db
        } else if db == 1 {
            da
        } else {
            return None;
        };
    }
    Some(out)
}

/// Strips leading unit extents.
fn trimmed(shape: &[usize]) -> &[usize] {
    let lead = shape.iter().take_while(|&&d| d == 1).count();
    &shape[lead..]
}

/// True when repeating `small` cyclically reproduces its broadcast to `big`.
fn is_cyclic_suffix(small: &[usize], big: &[usize]) -> bool {
    let s = trimmed(small);
    s.len() <= big.len() && big[big.len() - s.len()..] == *s
}

/// Input strides aligned to `out_shape`, zero where the input is broadcast.
fn aligned_strides(in_shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let rank = out_shape.len();
    let mut strides = vec![0; rank];
    let mut acc = 1;
    for i in (0..in_shape.len()).rev() {
        let o = i + rank - in_shape.len();
        strides[o] = if in_shape[i] == 1 { 0 } else { acc };
        acc *= in_shape[i];
    }
    strides
}

/// Calls `f(out_index, in_index)` for every element of `out_shape`.
fn for_each_strided(out_shape: &[usize], strides: &[usize], mut f: impl FnMut(usize, usize)) {
    let total: usize = out_shape.iter().product();
    if total == 0 {
        return;
    }
    let rank = out_shape.len();
    let mut counter = vec![0usize; rank];
    let mut src = 0usize;
    for dst in 0..total {
        f(dst, src);
        for d in (0..rank).rev() {
            counter[d] += 1;
            src += strides[d];
            if counter[d] < out_shape[d] {
                break;
            }
            src -= strides[d] * counter[d];
            counter[d] = 0;
        }
    }
}

/// Materializes `src` (of `in_shape`) broadcast to `out_shape`.
pub(crate) fn expand<T: Scalar>(src: &[T], in_shape: &[usize], out_shape: &[usize]) -> Vec<T> {
    let total: usize = out_shape.iter().product();
    if in_shape == out_shape {
        return src.to_vec();
    }
    if src.len() == 1 {
        return vec![src[0]; total];
    }
    if is_cyclic_suffix(in_shape, out_shape) {
        return (0..total).map(|i| src[i % src.len()]).collect();
    }
    let strides = aligned_strides(in_shape, out_shape);
    let mut out = vec![T::zero(); total];
    for_each_strided(out_shape, &strides, |d, s| out[d] = src[s]);
    out
}

/// Sums `grad` (of `out_shape`) down to `in_shape`, the adjoint of [`expand`].
pub(crate) fn reduce_to<T: Scalar>(grad: &[T], out_shape: &[usize], in_shape: &[usize]) -> Vec<T> {
    if in_shape == out_shape {
        return grad.to_vec();
    }
    let n_in: usize = in_shape.iter().product();
    if n_in == 1 {
        return vec![grad.iter().copied().sum()];
    }
    let mut out = vec![T::zero(); n_in];
    if is_cyclic_suffix(in_shape, out_shape) {
        for chunk in grad.chunks(n_in) {
            for (o, &g) in out.iter_mut().zip(chunk) {
                *o += g;
            }
        }
        return out;
    }
    let strides = aligned_strides(in_shape, out_shape);
    for_each_strided(out_shape, &strides, |d, s| out[s] += grad[d]);
    out
}

/// Elementwise binary map under broadcasting.
pub(crate) fn zip_broadcast<T: Scalar>(
    a: &[T],
    a_shape: &[usize],
    b: &[T],
    b_shape: &[usize],
    out_shape: &[usize],
    f: impl Fn(T, T) -> T,
) -> Vec<T> {
    if a_shape == b_shape {
        return a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect();
    }
    let total: usize = out_shape.iter().product();
    if a_shape == out_shape && is_cyclic_suffix(b_shape, out_shape) {
        let bl = b.len();
        let mut out = Vec::with_capacity(total);
        for chunk in a.chunks(bl) {
            out.extend(chunk.iter().zip(b).map(|(&x, &y)| f(x, y)));
        }
        return out;
    }
    if b_shape == out_shape && is_cyclic_suffix(a_shape, out_shape) {
        let al = a.len();
        let mut out = Vec::with_capacity(total);
        for chunk in b.chunks(al) {
            out.extend(a.iter().zip(chunk).map(|(&x, &y)| f(x, y)));
        }
        return out;
    }
    let ea = expand(a, a_shape, out_shape);
    let eb = expand(b, b_shape, out_shape);
    ea.into_iter().zip(eb).map(|(x, y)| f(x, y)).collect()
}

/// Transposes a row-major `rows × cols` matrix.
pub(crate) fn transpose<T: Scalar>(src: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = src[r * cols + c];
        }
    }
    out
}

/// General axis permutation of a row-major array.
pub(crate) fn permute<T: Scalar>(src: &[T], shape: &[usize], perm: &[usize]) -> (Vec<T>, Vec<usize>) {
    let rank = shape.len();
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = vec![T::zero(); src.len()];
    for_each_strided(&out_shape, &strides, |d, s| out[d] = src[s]);
    (out, out_shape)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_rules() {
        assert_eq!(broadcast_shape(&[4, 3], &[3]), Some(vec![4, 3]));
        assert_eq!(broadcast_shape(&[4, 1], &[1, 5]), Some(vec![4, 5]));
        assert_eq!(broadcast_shape(&[2, 3], &[4]), None);
        assert_eq!(broadcast_shape(&[], &[2, 2]), Some(vec![2, 2]));
    }

    #[test]
    fn expand_and_reduce_are_adjoint() {
        let src = [1.0, 2.0, 3.0];
        let out = expand(&src, &[3, 1], &[3, 2]);
        assert_eq!(out, vec![1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
        let back = reduce_to(&out, &[3, 2], &[3, 1]);
        assert_eq!(back, vec![2.0, 4.0, 6.0]);
        let cyc = expand(&src, &[1, 3], &[2, 3]);
        assert_eq!(cyc, vec![1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
        assert_eq!(reduce_to(&cyc, &[2, 3], &[3]), vec![2.0, 4.0, 6.0]);
    }

    #[test]
    fn permute_swaps_axes() {
        let src: Vec<f64> = (0..6).map(f64::from).collect();
        let (out, shape) = permute(&src, &[2, 3], &[1, 0]);
        assert_eq!(shape, vec![3, 2]);
        assert_eq!(out, transpose(&src, 2, 3));
    }
}
