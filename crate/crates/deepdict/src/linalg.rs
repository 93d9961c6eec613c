//! Numerical kernels shared by the training and evaluation modules.
//!
//! Every kernel here is deterministic: parallel execution partitions work
//! into fixed-size chunks along the sample axis and combines per-chunk
//! results in chunk order, so the parallel and sequential paths produce
//! bit-identical output. The parallel path can be disabled at runtime with
//! [`set_parallel`] or removed entirely by building without the `parallel`
//! feature.

use std::sync::atomic::{AtomicBool, Ordering};

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView2, Axis, ShapeBuilder};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Column chunk width for data-parallel per-sample work.
pub(crate) const COL_CHUNK: usize = 512;

/// Chunk width along the contracted axis for reductions such as `A Bᵀ`.
/// Partial products are summed in chunk order.
pub(crate) const ACC_CHUNK: usize = 8192;

static PARALLEL: AtomicBool = AtomicBool::new(cfg!(feature = "parallel"));

/// Enable or disable the rayon path at runtime. A no-op (always sequential)
/// when the crate is built without the `parallel` feature.
pub fn set_parallel(enabled: bool) {
    PARALLEL.store(enabled && cfg!(feature = "parallel"), Ordering::Relaxed);
}

/// Whether kernels currently dispatch work onto the rayon pool.
pub fn parallel_enabled() -> bool {
    cfg!(feature = "parallel") && PARALLEL.load(Ordering::Relaxed)
}

pub(crate) fn for_each_chunk<T, F>(items: Vec<T>, f: F)
where
    T: Send,
    F: Fn(T) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel_enabled() {
        items.into_par_iter().for_each(f);
        return;
    }
    items.into_iter().for_each(f);
}

/// Map over chunks, preserving chunk order in the returned vector.
pub(crate) fn map_chunks<T, R, F>(items: Vec<T>, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel_enabled() {
        return items.into_par_iter().map(f).collect();
    }
    items.into_iter().map(f).collect()
}

/// Column-major zeros; all matrices in this crate store samples as columns.
pub(crate) fn fzeros(rows: usize, cols: usize) -> Array2<f64> {
    Array2::zeros((rows, cols).f())
}

/// Column-major copy of an arbitrary view.
pub(crate) fn to_f(a: ArrayView2<f64>) -> Array2<f64> {
    let mut out = fzeros(a.nrows(), a.ncols());
    out.assign(&a);
    out
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `a * b`, parallel over fixed column chunks of the result.
pub fn matmul(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    assert_eq!(a.ncols(), b.nrows(), "matmul operand shapes disagree");
    let mut out = fzeros(a.nrows(), b.ncols());
    let chunks: Vec<_> = out
        .axis_chunks_iter_mut(Axis(1), COL_CHUNK)
        .zip(b.axis_chunks_iter(Axis(1), COL_CHUNK))
        .collect();
    for_each_chunk(chunks, |(mut oc, bc)| {
        general_mat_mul(1.0, &a, &bc, 0.0, &mut oc);
    });
    out
}

/// `a * bᵀ` where `a` and `b` share their column (sample) axis. The
/// contraction is split into fixed chunks whose partial products are
/// accumulated in chunk order.
pub(crate) fn matmul_nt(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    assert_eq!(a.ncols(), b.ncols(), "matmul_nt operand shapes disagree");
    let pairs: Vec<_> = a
        .axis_chunks_iter(Axis(1), ACC_CHUNK)
        .zip(b.axis_chunks_iter(Axis(1), ACC_CHUNK))
        .collect();
    let partials = map_chunks(pairs, |(ac, bc)| {
        let mut p = fzeros(a.nrows(), b.nrows());
        general_mat_mul(1.0, &ac, &bc.t(), 0.0, &mut p);
        p
    });
    let mut acc = fzeros(a.nrows(), b.nrows());
    for p in partials {
        acc += &p;
    }
    acc
}

/// Sum of squared entries, chunked along columns with ordered accumulation.
pub(crate) fn frob_sq(a: ArrayView2<f64>) -> f64 {
    let chunks: Vec<_> = a.axis_chunks_iter(Axis(1), ACC_CHUNK).collect();
    let parts = map_chunks(chunks, |c| {
        let mut s = 0.0;
        for col in c.axis_iter(Axis(1)) {
            for &v in col.iter() {
                s += v * v;
            }
        }
        s
    });
    parts.into_iter().sum()
}

/// Sum of absolute entries, chunked along columns with ordered accumulation.
pub(crate) fn l1_norm(a: ArrayView2<f64>) -> f64 {
    let chunks: Vec<_> = a.axis_chunks_iter(Axis(1), ACC_CHUNK).collect();
    let parts = map_chunks(chunks, |c| {
        let mut s = 0.0;
        for col in c.axis_iter(Axis(1)) {
            for &v in col.iter() {
                s += v.abs();
            }
        }
        s
    });
    parts.into_iter().sum()
}

/// `‖x − d z‖²` without materializing the full product.
pub(crate) fn residual_sq(x: ArrayView2<f64>, d: ArrayView2<f64>, z: ArrayView2<f64>) -> f64 {
    debug_assert_eq!(x.nrows(), d.nrows());
    debug_assert_eq!(d.ncols(), z.nrows());
    debug_assert_eq!(x.ncols(), z.ncols());
    let pairs: Vec<_> = x
        .axis_chunks_iter(Axis(1), COL_CHUNK)
        .zip(z.axis_chunks_iter(Axis(1), COL_CHUNK))
        .collect();
    let parts = map_chunks(pairs, |(xc, zc)| {
        let mut t = fzeros(d.nrows(), zc.ncols());
        general_mat_mul(1.0, &d, &zc, 0.0, &mut t);
        let mut s = 0.0;
        for (tc, xcol) in t.axis_iter(Axis(1)).zip(xc.axis_iter(Axis(1))) {
            for (&u, &v) in tc.iter().zip(xcol.iter()) {
                let r = v - u;
                s += r * r;
            }
        }
        s
    });
    parts.into_iter().sum()
}

pub(crate) fn max_abs(a: ArrayView2<f64>) -> f64 {
    let mut m = 0.0f64;
    for &v in a.iter() {
        m = m.max(v.abs());
    }
    m
}

/// Lower Cholesky factor of a symmetric matrix, stored row-major flat,
/// plus the extreme diagonal entries. `None` when a pivot is not strictly
/// positive.
fn cholesky(g: &Array2<f64>) -> Option<(Vec<f64>, f64, f64)> {
    let n = g.nrows();
    let mut l = vec![0.0f64; n * n];
    let mut dmin = f64::INFINITY;
    let mut dmax = 0.0f64;
    for j in 0..n {
        let mut d = g[[j, j]];
        {
            let rj = &l[j * n..j * n + j];
            d -= dot(rj, rj);
        }
        // d <= 0.0 is false for NaN, so check finiteness separately
        if d <= 0.0 || !d.is_finite() {
            return None;
        }
        let dj = d.sqrt();
        l[j * n + j] = dj;
        dmin = dmin.min(dj);
        dmax = dmax.max(dj);
        for i in (j + 1)..n {
            let s = {
                let rj = &l[j * n..j * n + j];
                let ri = &l[i * n..i * n + j];
                g[[i, j]] - dot(ri, rj)
            };
            l[i * n + j] = s / dj;
        }
    }
    Some((l, dmin, dmax))
}

fn transpose_flat(l: &[f64], n: usize) -> Vec<f64> {
    let mut t = vec![0.0f64; n * n];
    for i in 0..n {
        for k in 0..n {
            t[i * n + k] = l[k * n + i];
        }
    }
    t
}

fn chol_solve_into(l: &[f64], lt: &[f64], n: usize, rhs: ArrayView2<f64>, out: &mut Array2<f64>) {
    let pairs: Vec<_> = out
        .axis_chunks_iter_mut(Axis(1), COL_CHUNK)
        .zip(rhs.axis_chunks_iter(Axis(1), COL_CHUNK))
        .collect();
    for_each_chunk(pairs, |(mut oc, rc)| {
        for (mut ocol, rcol) in oc.axis_iter_mut(Axis(1)).zip(rc.axis_iter(Axis(1))) {
            let x = ocol
                .as_slice_memory_order_mut()
                .expect("output columns are contiguous");
            for i in 0..n {
                let s = rcol[i] - dot(&l[i * n..i * n + i], &x[..i]);
                x[i] = s / l[i * n + i];
            }
            for i in (0..n).rev() {
                let s = x[i] - dot(&lt[i * n + i + 1..i * n + n], &x[i + 1..]);
                x[i] = s / lt[i * n + i];
            }
        }
    });
}

/// Solve `g * out = rhs` for a symmetric positive semidefinite gram matrix.
/// When the Cholesky condition estimate exceeds 1e12 (or factorization
/// fails outright), the solve is retried once with a ridge of
/// `1e-8 * trace(g) / n` added to the diagonal.
pub(crate) fn solve_gram_system(g: &Array2<f64>, rhs: ArrayView2<f64>) -> Result<Array2<f64>> {
    let n = g.nrows();
    if g.ncols() != n {
        return Err(Error::Dimension(format!(
            "gram matrix must be square, got {}x{}",
            g.nrows(),
            g.ncols()
        )));
    }
    if rhs.nrows() != n {
        return Err(Error::Dimension(format!(
            "right-hand side has {} rows, expected {}",
            rhs.nrows(),
            n
        )));
    }
    const COND_LIMIT: f64 = 1e12;
    let mut fac = cholesky(g);
    let ill = match &fac {
        Some((_, dmin, dmax)) => (dmax / dmin).powi(2) > COND_LIMIT,
        None => true,
    };
    if ill {
        let tr: f64 = (0..n).map(|i| g[[i, i]]).sum();
        if tr <= 0.0 || tr.is_nan() {
            return Err(Error::Degenerate(
                "gram matrix has zero trace, system is unsolvable".into(),
            ));
        }
        let eps = 1e-8 * tr / n as f64;
        let mut gr = g.clone();
        for i in 0..n {
            gr[[i, i]] += eps;
        }
        log::debug!("ill-conditioned gram system, retrying with ridge {eps:.3e}");
        fac = cholesky(&gr);
    }
    let (l, _, _) = fac.ok_or_else(|| {
        Error::Degenerate("gram matrix is not positive definite even with ridge".into())
    })?;
    let lt = transpose_flat(&l, n);
    let mut out = fzeros(n, rhs.ncols());
    chol_solve_into(&l, &lt, n, rhs, &mut out);
    Ok(out)
}

/// Orthonormal basis for the columns of `a` via Householder reflections,
/// with signs fixed so the triangular factor has a nonnegative diagonal.
/// Consumes `a` (column-major, `m >= k`); errors if any pivot magnitude
/// falls to 1e-12 or below.
pub(crate) fn householder_q(mut a: Array2<f64>) -> Result<Array2<f64>> {
    let (m, k) = a.dim();
    debug_assert!(m >= k);
    let mut vs: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut betas = vec![0.0f64; k];
    let mut rdiag = vec![0.0f64; k];
    for j in 0..k {
        let (ajj, normx) = {
            let col = a.slice(s![j.., j]);
            let cs = col.as_slice_memory_order().expect("column is contiguous");
            (cs[0], dot(cs, cs).sqrt())
        };
        let alpha = if ajj >= 0.0 { -normx } else { normx };
        if alpha.abs() <= 1e-12 {
            return Err(Error::Degenerate(format!(
                "rank deficiency detected at column {j}: pivot magnitude {:.3e} is at or below 1e-12",
                alpha.abs()
            )));
        }
        rdiag[j] = alpha;
        let mut v = a.slice(s![j.., j]).to_vec();
        v[0] = ajj - alpha;
        let beta = 2.0 / dot(&v, &v);
        for c in (j + 1)..k {
            let mut col = a.slice_mut(s![j.., c]);
            let cs = col
                .as_slice_memory_order_mut()
                .expect("column is contiguous");
            let w = beta * dot(&v, cs);
            for (ci, vi) in cs.iter_mut().zip(&v) {
                *ci -= w * vi;
            }
        }
        a[[j, j]] = alpha;
        vs.push(v);
        betas[j] = beta;
    }
    let mut q = fzeros(m, k);
    for j in 0..k {
        q[[j, j]] = 1.0;
    }
    for j in (0..k).rev() {
        let v = &vs[j];
        let beta = betas[j];
        for c in j..k {
            let mut col = q.slice_mut(s![j.., c]);
            let cs = col
                .as_slice_memory_order_mut()
                .expect("column is contiguous");
            let w = beta * dot(v, cs);
            for (ci, vi) in cs.iter_mut().zip(v) {
                *ci -= w * vi;
            }
        }
    }
    for (j, &r) in rdiag.iter().enumerate() {
        if r < 0.0 {
            q.column_mut(j).mapv_inplace(|t| -t);
        }
    }
    Ok(q)
}

/// Largest eigenvalue of a symmetric positive semidefinite matrix by power
/// iteration from a fixed starting vector, run until the estimate changes
/// by at most 1e-9 relative or 1000 iterations.
pub(crate) fn top_eigenvalue_spd(g: &Array2<f64>) -> f64 {
    let n = g.nrows();
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + i as f64 * 1e-4).collect();
    let vn = dot(&v, &v).sqrt();
    for vi in &mut v {
        *vi /= vn;
    }
    let mut w = vec![0.0f64; n];
    let mut lam_prev = 0.0f64;
    for _ in 0..1000 {
        // g is symmetric, so contracting along contiguous columns is exact
        for (i, wi) in w.iter_mut().enumerate() {
            let col = g.column(i);
            let cs = col.as_slice_memory_order();
            *wi = match cs {
                Some(cs) => dot(cs, &v),
                None => col.iter().zip(&v).map(|(a, b)| a * b).sum(),
            };
        }
        let lam = dot(&w, &w).sqrt();
        if lam == 0.0 {
            return 0.0;
        }
        if (lam - lam_prev).abs() <= 1e-9 * lam {
            return lam;
        }
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = wi / lam;
        }
        lam_prev = lam;
    }
    lam_prev
}
