//! Slice-level numeric kernels used by the graph's forward and backward
//! passes. Reductions accumulate in f64.

use crate::scalar::Scalar;

/// Strided matrix view: element (i, j) lives at `i * rs + j * cs`.
#[derive(Clone, Copy)]
pub(crate) struct View<'a, T> {
    pub data: &'a [T],
    pub rs: isize,
    pub cs: isize,
}

impl<'a, T> View<'a, T> {
    pub fn rows(data: &'a [T], cols: usize) -> Self {
        View {
            data,
            rs: cols as isize,
            cs: 1,
        }
    }

    pub fn transposed(data: &'a [T], cols: usize) -> Self {
        View {
            data,
            rs: 1,
            cs: cols as isize,
        }
    }
}

/// `c (+)= a · b` for an m×k by k×n product written row-major into `c`.
pub(crate) fn gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: View<'_, T>,
    b: View<'_, T>,
    c: &mut [T],
    accumulate: bool,
) {
    debug_assert!(c.len() >= m * n);
    let beta = if accumulate { T::one() } else { T::zero() };
    if k == 0 {
        if !accumulate {
            c[..m * n].iter_mut().for_each(|x| *x = T::zero());
        }
        return;
    }
    if m * n * k <= 2048 {
        // tiny products: packing overhead dominates
        for i in 0..m {
            for j in 0..n {
                let mut acc = T::zero();
                for p in 0..k {
                    let av = a.data[(i as isize * a.rs + p as isize * a.cs) as usize];
                    let bv = b.data[(p as isize * b.rs + j as isize * b.cs) as usize];
                    acc = acc + av * bv;
                }
                let slot = &mut c[i * n + j];
                *slot = if accumulate { *slot + acc } else { acc };
            }
        }
        return;
    }
    T::gemm(
        m,
        k,
        n,
        T::one(),
        a.data,
        a.rs,
        a.cs,
        b.data,
        b.rs,
        b.cs,
        beta,
        c,
        n as isize,
        1,
    );
}

pub(crate) fn softmax_rows<T: Scalar>(x: &[T], n: usize, out: &mut [T]) {
    for (row, orow) in x.chunks_exact(n).zip(out.chunks_exact_mut(n)) {
        let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.f64()));
        let mut denom = 0.0f64;
        for (o, v) in orow.iter_mut().zip(row) {
            let e = (v.f64() - max).exp();
            denom += e;
            *o = T::of(e);
        }
        for o in orow.iter_mut() {
            *o = T::of(o.f64() / denom);
        }
    }
}

pub(crate) fn softmax_rows_backward<T: Scalar>(y: &[T], dy: &[T], n: usize, dx: &mut [T]) {
    for ((yr, dyr), dxr) in y
        .chunks_exact(n)
        .zip(dy.chunks_exact(n))
        .zip(dx.chunks_exact_mut(n))
    {
        let dot: f64 = yr.iter().zip(dyr).map(|(a, b)| a.f64() * b.f64()).sum();
        for ((o, &yv), &g) in dxr.iter_mut().zip(yr).zip(dyr) {
            *o = *o + T::of(yv.f64() * (g.f64() - dot));
        }
    }
}

pub(crate) struct LayerNormCache<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<f64>,
}

pub(crate) fn layer_norm_rows<T: Scalar>(
    x: &[T],
    gamma: &[T],
    beta: &[T],
    eps: f64,
    out: &mut [T],
) -> LayerNormCache<T> {
    let d = gamma.len();
    let rows = x.len() / d;
    let mut xhat = vec![T::zero(); x.len()];
    let mut inv_std = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().map(|v| v.f64()).sum::<f64>() / d as f64;
        let var = row
            .iter()
            .map(|v| {
                let c = v.f64() - mean;
                c * c
            })
            .sum::<f64>()
            / d as f64;
        let istd = 1.0 / (var + eps).sqrt();
        inv_std.push(istd);
        for j in 0..d {
            let h = (row[j].f64() - mean) * istd;
            xhat[r * d + j] = T::of(h);
            out[r * d + j] = T::of(gamma[j].f64() * h + beta[j].f64());
        }
    }
    LayerNormCache { xhat, inv_std }
}

/// Accumulates into `dx`, `dgamma`, `dbeta` (any may be absent).
pub(crate) fn layer_norm_rows_backward<T: Scalar>(
    cache: &LayerNormCache<T>,
    gamma: &[T],
    dy: &[T],
    dx: Option<&mut [T]>,
    dgamma: Option<&mut [T]>,
    dbeta: Option<&mut [T]>,
) {
    let d = gamma.len();
    let rows = dy.len() / d;
    if let Some(dg) = dgamma {
        for r in 0..rows {
            for j in 0..d {
                dg[j] = dg[j] + dy[r * d + j] * cache.xhat[r * d + j];
            }
        }
    }
    if let Some(db) = dbeta {
        for r in 0..rows {
            for j in 0..d {
                db[j] = db[j] + dy[r * d + j];
            }
        }
    }
    if let Some(dx) = dx {
        let mut dxhat = vec![0.0f64; d];
        for r in 0..rows {
            let mut s1 = 0.0;
            let mut s2 = 0.0;
            for j in 0..d {
                let g = dy[r * d + j].f64() * gamma[j].f64();
                dxhat[j] = g;
                s1 += g;
                s2 += g * cache.xhat[r * d + j].f64();
            }
            let istd = cache.inv_std[r];
            for j in 0..d {
                let h = cache.xhat[r * d + j].f64();
                let v = istd / d as f64 * (d as f64 * dxhat[j] - s1 - h * s2);
                dx[r * d + j] = dx[r * d + j] + T::of(v);
            }
        }
    }
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    let v = x.f64();
    let s = if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    };
    T::of(s)
}

/// Strides of a row-major shape.
pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Writes `x` (of `shape`) permuted by `perm` into `out`, or accumulates the
/// inverse mapping when `inverse` is set (used by backward).
pub(crate) fn permute<T: Scalar>(
    x: &[T],
    shape: &[usize],
    perm: &[usize],
    out: &mut [T],
    inverse: bool,
) {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let n = x.len();
    let nd = shape.len();
    let mut idx = vec![0usize; nd];
    for o in 0..n {
        let mut src = 0;
        for ax in 0..nd {
            src += idx[ax] * in_strides[perm[ax]];
        }
        if inverse {
            // `x` is the gradient laid out in output order
            out[src] = out[src] + x[o];
        } else {
            out[o] = x[src];
        }
        for ax in (0..nd).rev() {
            idx[ax] += 1;
            if idx[ax] < out_shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
}
