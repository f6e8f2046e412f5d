//! Dense (`groups == 1`) convolution as im2col + GEMM. Rows of the column
//! matrix are `(sample, output position)` pairs, processed in blocks so the
//! buffer stays small at large grids while tiny grids still batch together.
//! Matches the direct loops up to summation order.

use rayon::prelude::*;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::conv::{src, Conv3dSpec, ConvGeometry};
use super::matmul::{gemm_acc, gemm_nt_acc};

const BLOCK: usize = 256;
const NONE: usize = usize::MAX;

struct Layout {
    cin: usize,
    cout: usize,
    in_vol: usize,
    out_vol: usize,
    kvol: usize,
    k: usize,
}

impl Layout {
    fn new(spec: &Conv3dSpec, in_grid: [usize; 3], out_grid: [usize; 3]) -> Self {
        let kvol = spec.kernel.iter().product::<usize>();
        Self {
            cin: spec.in_channels,
            cout: spec.out_channels,
            in_vol: in_grid.iter().product(),
            out_vol: out_grid.iter().product(),
            kvol,
            k: spec.in_channels * kvol,
        }
    }
}

/// For rows `start..start+len` of the flattened `(batch, output position)`
/// index and every kernel tap, the offset of the source voxel within one
/// input channel of that sample, or `NONE` in the padding.
fn tap_table(spec: &Conv3dSpec, l: &Layout, in_grid: [usize; 3], out_grid: [usize; 3], start: usize, len: usize) -> Vec<usize> {
    let [id, ih, iw] = in_grid;
    let [_, oh, ow] = out_grid;
    let [kd, kh, kw] = spec.kernel;
    let [sd, sh, sw] = spec.stride;
    let [pd, ph, pw] = spec.padding;
    let mut table = Vec::with_capacity(len * l.kvol);
    for r in start..start + len {
        let p = r % l.out_vol;
        let (z, y, x) = (p / (oh * ow), (p / ow) % oh, p % ow);
        for a in 0..kd {
            for b in 0..kh {
                for c in 0..kw {
                    table.push(match (src(z, a, sd, pd, id), src(y, b, sh, ph, ih), src(x, c, sw, pw, iw)) {
                        (Some(zi), Some(yi), Some(xi)) => (zi * ih + yi) * iw + xi,
                        _ => NONE,
                    });
                }
            }
        }
    }
    table
}

/// `cols[len × K]` with column `ci·kvol + tap`.
fn gather<T: Scalar>(x: &[T], l: &Layout, table: &[usize], start: usize, len: usize, cols: &mut [T]) {
    cols[..len * l.k].par_chunks_mut(l.k).enumerate().for_each(|(i, row)| {
        let b = (start + i) / l.out_vol;
        let taps = &table[i * l.kvol..][..l.kvol];
        for ci in 0..l.cin {
            let xc = &x[(b * l.cin + ci) * l.in_vol..][..l.in_vol];
            for (dst, &t) in row[ci * l.kvol..][..l.kvol].iter_mut().zip(taps) {
                *dst = if t == NONE { T::zero() } else { xc[t] };
            }
        }
    });
}

fn scatter<T: Scalar>(g: &mut [T], l: &Layout, table: &[usize], start: usize, len: usize, cols: &[T]) {
    for i in 0..len {
        let b = (start + i) / l.out_vol;
        let taps = &table[i * l.kvol..][..l.kvol];
        let row = &cols[i * l.k..][..l.k];
        for ci in 0..l.cin {
            let gc = &mut g[(b * l.cin + ci) * l.in_vol..][..l.in_vol];
            for (&v, &t) in row[ci * l.kvol..][..l.kvol].iter().zip(taps) {
                if t != NONE {
                    gc[t] += v;
                }
            }
        }
    }
}

/// Element `(row r, channel c)` of a `[B, C, out_vol]` tensor.
#[inline]
fn plane_index(l: &Layout, channels: usize, r: usize, c: usize) -> usize {
    ((r / l.out_vol) * channels + c) * l.out_vol + r % l.out_vol
}

fn blocks(rows: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..rows).step_by(BLOCK).map(move |s| (s, BLOCK.min(rows - s)))
}

/// `out[n×k] += a[n×m] · b[k×m]ᵀ`, parallel over rows of `out`.
fn par_gemm_nt<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize) {
    out.par_chunks_mut(k).zip(a.par_chunks(m)).for_each(|(o, ar)| gemm_nt_acc(ar, b, o, 1, m, k));
}

/// `out[n×m] += a[n×k] · b[k×m]`, parallel over rows of `out`.
fn par_gemm<T: Scalar>(a: &[T], b: &[T], out: &mut [T], k: usize, m: usize) {
    out.par_chunks_mut(m).zip(a.par_chunks(k)).for_each(|(o, ar)| gemm_acc(ar, b, o, 1, k, m));
}

pub(crate) fn forward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &Conv3dSpec,
    g: &ConvGeometry,
) -> Tensor<T> {
    let l = Layout::new(spec, g.in_grid, g.out_grid);
    let rows = g.batch * l.out_vol;
    let (x, w) = (input.data(), weight.data());
    let mut out = vec![T::zero(); rows * l.cout];
    let mut cols = vec![T::zero(); BLOCK.min(rows) * l.k];
    let mut acc = vec![T::zero(); BLOCK.min(rows) * l.cout];
    for (start, len) in blocks(rows) {
        let table = tap_table(spec, &l, g.in_grid, g.out_grid, start, len);
        gather(x, &l, &table, start, len, &mut cols);
        acc[..len * l.cout].iter_mut().for_each(|v| *v = T::zero());
        par_gemm_nt(&cols[..len * l.k], w, &mut acc[..len * l.cout], l.k, l.cout);
        for i in 0..len {
            for co in 0..l.cout {
                let bv = bias.map_or(T::zero(), |t| t.data()[co]);
                out[plane_index(&l, l.cout, start + i, co)] = acc[i * l.cout + co] + bv;
            }
        }
    }
    let [od, oh, ow] = g.out_grid;
    Tensor::from_parts(vec![g.batch, l.cout, od, oh, ow], out)
}

fn grids(input_shape: &[usize], grad_out: &Tensor<impl Scalar>) -> ([usize; 3], [usize; 3]) {
    let gs = grad_out.shape();
    ([input_shape[2], input_shape[3], input_shape[4]], [gs[2], gs[3], gs[4]])
}

pub(crate) fn backward_input<T: Scalar>(
    grad_out: &Tensor<T>,
    input_shape: &[usize],
    weight: &Tensor<T>,
    spec: &Conv3dSpec,
) -> Tensor<T> {
    let (in_grid, out_grid) = grids(input_shape, grad_out);
    let l = Layout::new(spec, in_grid, out_grid);
    let rows = input_shape[0] * l.out_vol;
    let (go, w) = (grad_out.data(), weight.data());
    let mut gin = vec![T::zero(); input_shape[0] * l.cin * l.in_vol];
    let mut gt = vec![T::zero(); BLOCK.min(rows) * l.cout];
    let mut dcols = vec![T::zero(); BLOCK.min(rows) * l.k];
    for (start, len) in blocks(rows) {
        let table = tap_table(spec, &l, in_grid, out_grid, start, len);
        for i in 0..len {
            for co in 0..l.cout {
                gt[i * l.cout + co] = go[plane_index(&l, l.cout, start + i, co)];
            }
        }
        dcols[..len * l.k].iter_mut().for_each(|v| *v = T::zero());
        par_gemm(&gt[..len * l.cout], w, &mut dcols[..len * l.k], l.cout, l.k);
        scatter(&mut gin, &l, &table, start, len, &dcols);
    }
    Tensor::from_parts(input_shape.to_vec(), gin)
}

pub(crate) fn backward_params<T: Scalar>(grad_out: &Tensor<T>, input: &Tensor<T>, spec: &Conv3dSpec) -> (Tensor<T>, Tensor<T>) {
    let (in_grid, out_grid) = grids(input.shape(), grad_out);
    let l = Layout::new(spec, in_grid, out_grid);
    let batch = input.shape()[0];
    let rows = batch * l.out_vol;
    let (go, x) = (grad_out.data(), input.data());
    let mut gw = vec![T::zero(); l.cout * l.k];
    let mut cols = vec![T::zero(); BLOCK.min(rows) * l.k];
    let mut gblk = vec![T::zero(); BLOCK.min(rows) * l.cout];
    for (start, len) in blocks(rows) {
        let table = tap_table(spec, &l, in_grid, out_grid, start, len);
        gather(x, &l, &table, start, len, &mut cols);
        for co in 0..l.cout {
            for i in 0..len {
                gblk[co * len + i] = go[plane_index(&l, l.cout, start + i, co)];
            }
        }
        par_gemm(&gblk[..l.cout * len], &cols[..len * l.k], &mut gw, len, l.k);
    }
    let mut gbias = vec![T::zero(); l.cout];
    for b in 0..batch {
        for (co, acc) in gbias.iter_mut().enumerate() {
            *acc += go[(b * l.cout + co) * l.out_vol..][..l.out_vol].iter().copied().sum::<T>();
        }
    }
    (
        Tensor::from_parts(spec.weight_shape().to_vec(), gw),
        Tensor::from_parts(vec![l.cout], gbias),
    )
}
