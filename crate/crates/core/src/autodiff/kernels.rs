//! Dense matrix kernels.
//!
//! Work is split into fixed row blocks whose boundaries do not depend on the
//! thread count, and partial sums are combined in block order, so results are
//! bit-identical for any rayon pool size.

use rayon::prelude::*;

use crate::scalar::Scalar;

use super::tensor::transpose;

const ROW_BLOCK: usize = 64;
const REDUCE_BLOCK: usize = 1024;

const TILE_R: usize = 4;
const TILE_C: usize = 8;

#[inline(always)]
fn madd<T: Scalar, const FMA: bool>(acc: T, a: T, b: T) -> T {
    if FMA {
        a.mul_add(b, acc)
    } else {
        acc + a * b
    }
}

/// Whether the fused multiply-add kernels can run on this CPU.
pub fn fma_available() -> bool {
    #[cfg(target_arch = "x86_64")]
    {
        std::is_x86_feature_detected!("avx2") && std::is_x86_feature_detected!("fma")
    }
    #[cfg(not(target_arch = "x86_64"))]
    {
        false
    }
}

/// One rank-1 update of a `TILE_R×TILE_C` accumulator tile.
#[inline(always)]
fn rank1<T: Scalar, const FMA: bool>(acc: &mut [[T; TILE_C]; TILE_R], av: [T; TILE_R], bv: &[T; TILE_C]) {
    for (row, &a) in acc.iter_mut().zip(&av) {
        for (o, &b) in row.iter_mut().zip(bv) {
            *o = madd::<T, FMA>(*o, a, b);
        }
    }
}

fn tile_slice<T>(s: &[T], at: usize) -> &[T; TILE_C] {
    s[at..at + TILE_C].try_into().expect("tile width")
}

/// Rows `row0..row0 + cblk.len()/n` of `A·B` into `cblk`.
#[inline(always)]
fn matmul_rows<T: Scalar, const FMA: bool>(a: &[T], b: &[T], k: usize, n: usize, row0: usize, cblk: &mut [T]) {
    let full_c = n - n % TILE_C;
    let rows = cblk.len() / n;
    let full_r = rows - rows % TILE_R;
    for r0 in (0..full_r).step_by(TILE_R) {
        let ar: [&[T]; TILE_R] = std::array::from_fn(|r| &a[(row0 + r0 + r) * k..(row0 + r0 + r + 1) * k]);
        for j0 in (0..full_c).step_by(TILE_C) {
            let mut acc = [[T::zero(); TILE_C]; TILE_R];
            for p in 0..k {
                rank1::<T, FMA>(&mut acc, std::array::from_fn(|r| ar[r][p]), tile_slice(b, p * n + j0));
            }
            for (r, row) in acc.iter().enumerate() {
                let o = (r0 + r) * n + j0;
                cblk[o..o + TILE_C].copy_from_slice(row);
            }
        }
    }
    for r in 0..rows {
        let j_start = if r < full_r { full_c } else { 0 };
        if j_start == n {
            continue;
        }
        let arow = &a[(row0 + r) * k..(row0 + r + 1) * k];
        let crow = &mut cblk[r * n + j_start..(r + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n + j_start..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv = madd::<T, FMA>(*cv, av, bv);
            }
        }
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn matmul_rows_fma<T: Scalar>(a: &[T], b: &[T], k: usize, n: usize, row0: usize, cblk: &mut [T]) {
    matmul_rows::<T, true>(a, b, k, n, row0, cblk)
}

/// `Σ_{i in rows} A[i]ᵀ·B[i]` as a `k×n` block.
#[inline(always)]
fn at_b_rows<T: Scalar, const FMA: bool>(
    a: &[T],
    b: &[T],
    k: usize,
    n: usize,
    rows: std::ops::Range<usize>,
) -> Vec<T> {
    let mut acc = vec![T::zero(); k * n];
    let full_r = k - k % TILE_R;
    let full_c = n - n % TILE_C;
    for p0 in (0..full_r).step_by(TILE_R) {
        for j0 in (0..full_c).step_by(TILE_C) {
            let mut t = [[T::zero(); TILE_C]; TILE_R];
            for i in rows.clone() {
                let av: &[T; TILE_R] = a[i * k + p0..i * k + p0 + TILE_R].try_into().expect("tile height");
                rank1::<T, FMA>(&mut t, *av, tile_slice(b, i * n + j0));
            }
            for (r, row) in t.iter().enumerate() {
                let o = (p0 + r) * n + j0;
                acc[o..o + TILE_C].copy_from_slice(row);
            }
        }
    }
    if full_r == k && full_c == n {
        return acc;
    }
    for i in rows {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let j_start = if p < full_r { full_c } else { 0 };
            let out = &mut acc[p * n + j_start..(p + 1) * n];
            for (o, &bv) in out.iter_mut().zip(&brow[j_start..]) {
                *o = madd::<T, FMA>(*o, av, bv);
            }
        }
    }
    acc
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn at_b_rows_fma<T: Scalar>(a: &[T], b: &[T], k: usize, n: usize, rows: std::ops::Range<usize>) -> Vec<T> {
    at_b_rows::<T, true>(a, b, k, n, rows)
}

/// `C = A·B` with `A: m×k`, `B: k×n`.
pub fn matmul<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    if m == 0 || n == 0 {
        return c;
    }
    let fma = fma_available();
    c.par_chunks_mut(n * ROW_BLOCK).enumerate().for_each(|(blk, cblk)| {
        #[cfg(target_arch = "x86_64")]
        if fma {
            // SAFETY: the required CPU features were detected at runtime.
            unsafe { matmul_rows_fma(a, b, k, n, blk * ROW_BLOCK, cblk) };
            return;
        }
        let _ = fma;
        matmul_rows::<T, false>(a, b, k, n, blk * ROW_BLOCK, cblk);
    });
    c
}

/// `C = A·Bᵀ` with `A: m×k`, `B: n×k`.
pub fn matmul_a_bt<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let bt = transpose(b, n, k);
    matmul(a, &bt, m, k, n)
}

/// `C = Aᵀ·B` with `A: m×k`, `B: m×n`; result `k×n`.
pub fn matmul_at_b<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let blocks = m.div_ceil(REDUCE_BLOCK);
    let fma = fma_available();
    let partial = |blk: usize| {
        let rows = blk * REDUCE_BLOCK..((blk + 1) * REDUCE_BLOCK).min(m);
        #[cfg(target_arch = "x86_64")]
        if fma {
            // SAFETY: the required CPU features were detected at runtime.
            return unsafe { at_b_rows_fma(a, b, k, n, rows) };
        }
        let _ = fma;
        at_b_rows::<T, false>(a, b, k, n, rows)
    };
    if blocks <= 1 {
        return if blocks == 0 { vec![T::zero(); k * n] } else { partial(0) };
    }
    let parts: Vec<Vec<T>> = (0..blocks).into_par_iter().map(partial).collect();
    let mut out = vec![T::zero(); k * n];
    for part in parts {
        for (o, v) in out.iter_mut().zip(part) {
            *o += v;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn kernels_agree_with_naive_product() {
        for &(m, k, n) in &[(130, 7, 5), (67, 13, 19), (2100, 9, 17), (8, 4, 8)] {
            let a: Vec<f64> = (0..m * k).map(|i| ((i * 37 % 11) as f64) - 5.0).collect();
            let b: Vec<f64> = (0..k * n).map(|i| ((i * 13 % 7) as f64) * 0.5).collect();
            let want = naive(&a, &b, m, k, n);
            assert_eq!(matmul(&a, &b, m, k, n), want);
            let bt = transpose(&b, k, n);
            assert_eq!(matmul_a_bt(&a, &bt, m, k, n), want);
            let at = transpose(&a, m, k);
            let want_atb = naive(&at, &want, k, m, n);
            let got = matmul_at_b(&a, &want, m, k, n);
            for (g, w) in got.iter().zip(&want_atb) {
                assert!((g - w).abs() < 1e-9 * w.abs().max(1.0));
            }
        }
    }
}
