//! Batched matrix product with broadcast leading dimensions.

use crate::error::{dim_err, Result};
use crate::scalar::Scalar;
use crate::tensor::{numel, Tensor};

pub(crate) struct MatmulPlan {
    pub n: usize,
    pub k: usize,
    pub m: usize,
    pub batch_shape: Vec<usize>,
    /// Per broadcast batch element: (offset of the A matrix, offset of the B matrix).
    pub pairs: Vec<(usize, usize)>,
}

/// Broadcasts two leading-dimension shapes numpy-style.
fn broadcast_batch(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let r = a.len().max(b.len());
    let mut out = vec![0; r];
    for i in 0..r {
        let da = if i + a.len() >= r { a[i + a.len() - r] } else { 1 };
        let db = if i + b.len() >= r { b[i + b.len() - r] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Offset (in matrices) of the operand element corresponding to a broadcast batch index.
fn operand_index(batch_idx: &[usize], operand: &[usize]) -> usize {
    let skip = batch_idx.len() - operand.len();
    let mut off = 0;
    for (i, &d) in operand.iter().enumerate() {
        let bi = if d == 1 { 0 } else { batch_idx[skip + i] };
        off = off * d + bi;
    }
    off
}

pub(crate) fn plan(a: &[usize], b: &[usize]) -> Result<MatmulPlan> {
    if a.len() < 2 || b.len() < 2 {
        return Err(dim_err(format!("matmul needs rank ≥ 2 operands, got {a:?} and {b:?}")));
    }
    let (n, k) = (a[a.len() - 2], a[a.len() - 1]);
    let (k2, m) = (b[b.len() - 2], b[b.len() - 1]);
    if k != k2 {
        return Err(dim_err(format!("matmul inner extents differ: {a:?} · {b:?}")));
    }
    let ab = &a[..a.len() - 2];
    let bb = &b[..b.len() - 2];
    let batch_shape =
        broadcast_batch(ab, bb).ok_or_else(|| dim_err(format!("matmul batch dims not broadcastable: {a:?} · {b:?}")))?;
    let total = numel(&batch_shape);
    let mut pairs = Vec::with_capacity(total);
    let mut idx = vec![0; batch_shape.len()];
    for _ in 0..total {
        pairs.push((operand_index(&idx, ab) * n * k, operand_index(&idx, bb) * k * m));
        for j in (0..idx.len()).rev() {
            idx[j] += 1;
            if idx[j] < batch_shape[j] {
                break;
            }
            idx[j] = 0;
        }
    }
    Ok(MatmulPlan { n, k, m, batch_shape, pairs })
}

/// `out += a · b` for row-major `n×k` and `k×m` blocks.
#[inline]
pub(crate) fn gemm_acc<T: Scalar>(a: &[T], b: &[T], out: &mut [T], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let orow = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// Dot product with four independent accumulators so the loop vectorises.
#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `out += a · bᵀ` where `a` is `n×m` and `b` is `k×m`; `out` is `n×k`.
#[inline]
pub(crate) fn gemm_nt_acc<T: Scalar>(a: &[T], b: &[T], out: &mut [T], n: usize, m: usize, k: usize) {
    for i in 0..n {
        let arow = &a[i * m..(i + 1) * m];
        for j in 0..k {
            out[i * k + j] += dot(arow, &b[j * m..(j + 1) * m]);
        }
    }
}

/// `out += aᵀ · b` where `a` is `n×k` and `b` is `n×m`; `out` is `k×m`.
#[inline]
pub(crate) fn gemm_tn_acc<T: Scalar>(a: &[T], b: &[T], out: &mut [T], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let brow = &b[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let orow = &mut out[p * m..(p + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let p = plan(a.shape(), b.shape())?;
    let mut out = vec![T::zero(); p.pairs.len() * p.n * p.m];
    for (bi, &(ao, bo)) in p.pairs.iter().enumerate() {
        gemm_acc(
            &a.data()[ao..ao + p.n * p.k],
            &b.data()[bo..bo + p.k * p.m],
            &mut out[bi * p.n * p.m..(bi + 1) * p.n * p.m],
            p.n,
            p.k,
            p.m,
        );
    }
    let mut shape = p.batch_shape.clone();
    shape.extend([p.n, p.m]);
    Tensor::new(shape, out)
}

/// Gradients of `a · b` given the output gradient, reduced over broadcast dims.
pub fn matmul_backward<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    grad: &Tensor<T>,
    need_a: bool,
    need_b: bool,
) -> (Option<Tensor<T>>, Option<Tensor<T>>) {
    let p = plan(a.shape(), b.shape()).expect("shapes validated in forward");
    let (n, k, m) = (p.n, p.k, p.m);
    let mut ga = need_a.then(|| vec![T::zero(); a.numel()]);
    let mut gb = need_b.then(|| vec![T::zero(); b.numel()]);
    for (bi, &(ao, bo)) in p.pairs.iter().enumerate() {
        let g = &grad.data()[bi * n * m..(bi + 1) * n * m];
        if let Some(ga) = ga.as_mut() {
            gemm_nt_acc(g, &b.data()[bo..bo + k * m], &mut ga[ao..ao + n * k], n, m, k);
        }
        if let Some(gb) = gb.as_mut() {
            gemm_tn_acc(&a.data()[ao..ao + n * k], g, &mut gb[bo..bo + k * m], n, k, m);
        }
    }
    (
        ga.map(|d| Tensor::from_parts(a.shape().to_vec(), d)),
        gb.map(|d| Tensor::from_parts(b.shape().to_vec(), d)),
    )
}
