//! Dense compute kernels behind the tensor ops.
//!
//! Every kernel takes an [`Exec`] policy. The parallel path splits work
//! into disjoint output rows (or batch items) that are each computed by
//! the same sequential loop, so results are bit-identical to the
//! sequential path regardless of thread count.

use crate::real::Real;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Execution policy for a kernel call.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    /// Uses rayon when the `parallel` feature is on; otherwise identical
    /// to `Sequential`.
    Parallel,
}

impl Exec {
    /// The default policy for this build.
    pub fn auto() -> Self {
        if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

/// Work below this many multiply-adds runs sequentially.
#[cfg(feature = "parallel")]
const PAR_THRESHOLD: usize = 1 << 15;

/// Applies `f(row_index, row)` to each `row_len`-sized chunk of `out`.
pub fn for_each_row<T, F>(exec: Exec, out: &mut [T], row_len: usize, work: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    if row_len == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    if exec == Exec::Parallel && work >= PAR_THRESHOLD {
        out.par_chunks_mut(row_len)
            .enumerate()
            .for_each(|(i, row)| f(i, row));
        return;
    }
    let _ = (exec, work);
    out.chunks_mut(row_len)
        .enumerate()
        .for_each(|(i, row)| f(i, row));
}

/// Maps `f` over `0..n`, collecting results in index order.
pub fn map_indices<R, F>(exec: Exec, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec == Exec::Parallel && n > 1 {
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

/// `out[m×n] += a[m×k] · b[k×n]`
pub fn gemm_nn<T: Real>(exec: Exec, m: usize, k: usize, n: usize, a: &[T], b: &[T], out: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for_each_row(exec, out, n, m * k * n, |i, row| {
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &av) in a_row.iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    });
}

/// `out[m×n] += aᵀ · b` where `a` is stored `k×m` and `b` is `k×n`.
pub fn gemm_tn<T: Real>(exec: Exec, m: usize, k: usize, n: usize, a: &[T], b: &[T], out: &mut [T]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for_each_row(exec, out, n, m * k * n, |i, row| {
        for p in 0..k {
            let av = a[p * m + i];
            if av == T::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    });
}

/// `out[m×n] += a · bᵀ` where `a` is `m×k` and `b` is stored `n×k`.
pub fn gemm_nt<T: Real>(exec: Exec, m: usize, k: usize, n: usize, a: &[T], b: &[T], out: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    for_each_row(exec, out, n, m * k * n, |i, row| {
        let a_row = &a[i * k..(i + 1) * k];
        for (j, o) in row.iter_mut().enumerate() {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = T::zero();
            for (&x, &y) in a_row.iter().zip(b_row) {
                acc += x * y;
            }
            *o += acc;
        }
    });
}

/// Geometry of a 2-D convolution on one `C×H×W` sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.height + 2 * self.pad - self.kh) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.width + 2 * self.pad - self.kw) / self.stride + 1
    }

    /// Rows of the patch matrix.
    pub fn patch_len(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    pub fn out_len(&self) -> usize {
        self.out_h() * self.out_w()
    }

    /// Source offset in the sample for patch row `r`, output pixel `(oy, ox)`;
    /// `None` when the tap lands in the zero padding.
    #[inline]
    fn source(&self, r: usize, oy: usize, ox: usize) -> Option<usize> {
        let c = r / (self.kh * self.kw);
        let ky = (r / self.kw) % self.kh;
        let kx = r % self.kw;
        let y = (oy * self.stride + ky) as isize - self.pad as isize;
        let x = (ox * self.stride + kx) as isize - self.pad as isize;
        if y < 0 || x < 0 || y >= self.height as isize || x >= self.width as isize {
            None
        } else {
            Some((c * self.height + y as usize) * self.width + x as usize)
        }
    }
}

/// Unrolls one sample into a `(C·kh·kw) × (H'·W')` patch matrix.
pub fn im2col<T: Real>(g: &ConvGeom, input: &[T], cols: &mut [T]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let ol = oh * ow;
    debug_assert_eq!(cols.len(), g.patch_len() * ol);
    for r in 0..g.patch_len() {
        let row = &mut cols[r * ol..(r + 1) * ol];
        for oy in 0..oh {
            for ox in 0..ow {
                row[oy * ow + ox] = match g.source(r, oy, ox) {
                    Some(s) => input[s],
                    None => T::zero(),
                };
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters patch-matrix gradients back onto the sample.
pub fn col2im<T: Real>(g: &ConvGeom, cols: &[T], grad_input: &mut [T]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let ol = oh * ow;
    for r in 0..g.patch_len() {
        let row = &cols[r * ol..(r + 1) * ol];
        for oy in 0..oh {
            for ox in 0..ow {
                if let Some(s) = g.source(r, oy, ox) {
                    grad_input[s] += row[oy * ow + ox];
                }
            }
        }
    }
}

/// Batched convolution forward: `x` is `N×C×H×W`, `kernel` is
/// `C_out × (C·kh·kw)`. Returns the output and the per-sample patch matrices.
pub fn conv2d_forward<T: Real>(
    exec: Exec,
    g: &ConvGeom,
    batch: usize,
    c_out: usize,
    x: &[T],
    kernel: &[T],
    bias: Option<&[T]>,
) -> (Vec<T>, Vec<Vec<T>>) {
    let in_len = g.channels * g.height * g.width;
    let ol = g.out_len();
    let pl = g.patch_len();
    let per_sample = map_indices(exec, batch, |b| {
        let mut cols = vec![T::zero(); pl * ol];
        im2col(g, &x[b * in_len..(b + 1) * in_len], &mut cols);
        let mut out = vec![T::zero(); c_out * ol];
        if let Some(bias) = bias {
            for (co, chunk) in out.chunks_mut(ol).enumerate() {
                chunk.fill(bias[co]);
            }
        }
        gemm_nn(Exec::Sequential, c_out, pl, ol, kernel, &cols, &mut out);
        (out, cols)
    });
    let mut out = Vec::with_capacity(batch * c_out * ol);
    let mut cols = Vec::with_capacity(batch);
    for (o, c) in per_sample {
        out.extend_from_slice(&o);
        cols.push(c);
    }
    (out, cols)
}

/// Gradients of a batched convolution. Per-sample kernel gradients are
/// reduced in sample order.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<T: Real>(
    exec: Exec,
    g: &ConvGeom,
    c_out: usize,
    cols: &[Vec<T>],
    kernel: &[T],
    grad_out: &[T],
    want_input: bool,
    want_kernel: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let batch = cols.len();
    let in_len = g.channels * g.height * g.width;
    let ol = g.out_len();
    let pl = g.patch_len();
    let per_sample = map_indices(exec, batch, |b| {
        let go = &grad_out[b * c_out * ol..(b + 1) * c_out * ol];
        let dx = want_input.then(|| {
            let mut dcols = vec![T::zero(); pl * ol];
            gemm_tn(Exec::Sequential, pl, c_out, ol, kernel, go, &mut dcols);
            let mut dx = vec![T::zero(); in_len];
            col2im(g, &dcols, &mut dx);
            dx
        });
        let dk = want_kernel.then(|| {
            let mut dk = vec![T::zero(); c_out * pl];
            gemm_nt(Exec::Sequential, c_out, ol, pl, go, &cols[b], &mut dk);
            dk
        });
        (dx, dk)
    });
    let mut dx_all = want_input.then(|| Vec::with_capacity(batch * in_len));
    let mut dk_all = want_kernel.then(|| vec![T::zero(); c_out * pl]);
    for (dx, dk) in per_sample {
        if let (Some(all), Some(dx)) = (dx_all.as_mut(), dx) {
            all.extend_from_slice(&dx);
        }
        if let (Some(all), Some(dk)) = (dk_all.as_mut(), dk) {
            for (a, v) in all.iter_mut().zip(dk) {
                *a += v;
            }
        }
    }
    (dx_all, dk_all)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
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

    fn transpose(r: usize, c: usize, a: &[f64]) -> Vec<f64> {
        let mut t = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                t[j * r + i] = a[i * c + j];
            }
        }
        t
    }

    #[test]
    fn gemm_variants_agree_with_triple_loop() {
        let (m, k, n) = (5, 7, 3);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
        let want = naive(m, k, n, &a, &b);
        for exec in [Exec::Sequential, Exec::Parallel] {
            let mut c = vec![0.0; m * n];
            gemm_nn(exec, m, k, n, &a, &b, &mut c);
            assert_eq!(c, want);
            let mut c = vec![0.0; m * n];
            gemm_tn(exec, m, k, n, &transpose(m, k, &a), &b, &mut c);
            for (x, y) in c.iter().zip(&want) {
                assert!((x - y).abs() < 1e-12);
            }
            let mut c = vec![0.0; m * n];
            gemm_nt(exec, m, k, n, &a, &transpose(k, n, &b), &mut c);
            for (x, y) in c.iter().zip(&want) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn large_gemm_is_identical_across_policies() {
        let (m, k, n) = (64, 48, 80);
        let a: Vec<f32> = (0..m * k).map(|i| ((i * 7 % 13) as f32) - 6.0).collect();
        let b: Vec<f32> = (0..k * n).map(|i| ((i * 5 % 11) as f32) * 0.25).collect();
        let mut s = vec![0.0; m * n];
        let mut p = vec![0.0; m * n];
        gemm_nn(Exec::Sequential, m, k, n, &a, &b, &mut s);
        gemm_nn(Exec::Parallel, m, k, n, &a, &b, &mut p);
        assert_eq!(s, p);
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let g = ConvGeom {
            channels: 2,
            height: 5,
            width: 4,
            kh: 3,
            kw: 2,
            stride: 2,
            pad: 1,
        };
        let x: Vec<f64> = (0..2 * 5 * 4).map(|i| (i as f64).sin()).collect();
        let y: Vec<f64> = (0..g.patch_len() * g.out_len())
            .map(|i| (i as f64 * 0.3).cos())
            .collect();
        let mut cols = vec![0.0; y.len()];
        im2col(&g, &x, &mut cols);
        let mut back = vec![0.0; x.len()];
        col2im(&g, &y, &mut back);
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
