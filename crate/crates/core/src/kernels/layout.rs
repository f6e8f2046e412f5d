//! Axis reductions, softmax, permutation, concatenation, resizing and
//! trailing-one broadcasting.

use crate::error::{dim_err, Result};
use crate::scalar::Scalar;
use crate::tensor::{numel, strides, Tensor};

/// Splits `shape` around `axis` into (outer, extent, inner) block sizes.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(dim_err(format!("axis {axis} out of range for shape {shape:?}")));
    }
    Ok((numel(&shape[..axis]), shape[axis], numel(&shape[axis + 1..])))
}

fn keepdim(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut s = shape.to_vec();
    s[axis] = 1;
    s
}

pub fn mean_axis<T: Scalar>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    let (outer, n, inner) = split_axis(x.shape(), axis)?;
    let d = x.data();
    let scale = T::one() / T::from_usize_lossy(n);
    let mut out = vec![T::zero(); outer * inner];
    for o in 0..outer {
        for j in 0..n {
            let row = &d[(o * n + j) * inner..][..inner];
            for (acc, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                *acc += v;
            }
        }
    }
    out.iter_mut().for_each(|v| *v *= scale);
    Ok(Tensor::from_parts(keepdim(x.shape(), axis), out))
}

/// Max along `axis` with the position (along the axis) of the first maximum.
pub fn max_axis<T: Scalar>(x: &Tensor<T>, axis: usize) -> Result<(Tensor<T>, Vec<usize>)> {
    let (outer, n, inner) = split_axis(x.shape(), axis)?;
    let d = x.data();
    let mut out = vec![T::neg_infinity(); outer * inner];
    let mut arg = vec![0usize; outer * inner];
    for o in 0..outer {
        for j in 0..n {
            let row = &d[(o * n + j) * inner..][..inner];
            for i in 0..inner {
                // strict comparison keeps the first index on ties
                if row[i] > out[o * inner + i] {
                    out[o * inner + i] = row[i];
                    arg[o * inner + i] = j;
                }
            }
        }
    }
    Ok((Tensor::from_parts(keepdim(x.shape(), axis), out), arg))
}

pub fn softmax<T: Scalar>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    let (outer, n, inner) = split_axis(x.shape(), axis)?;
    let d = x.data();
    let mut out = vec![T::zero(); d.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| (o * n + j) * inner + i;
            let mut mx = T::neg_infinity();
            for j in 0..n {
                mx = mx.max(d[at(j)]);
            }
            let mut z = T::zero();
            for j in 0..n {
                let e = (d[at(j)] - mx).exp();
                out[at(j)] = e;
                z += e;
            }
            for j in 0..n {
                out[at(j)] /= z;
            }
        }
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), out))
}

/// Backward of softmax: `dx = y ⊙ (g − Σ_axis g⊙y)`.
pub fn softmax_backward<T: Scalar>(y: &Tensor<T>, g: &Tensor<T>, axis: usize) -> Tensor<T> {
    let (outer, n, inner) = split_axis(y.shape(), axis).expect("validated in forward");
    let (yd, gd) = (y.data(), g.data());
    let mut out = vec![T::zero(); yd.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| (o * n + j) * inner + i;
            let dot: T = (0..n).map(|j| yd[at(j)] * gd[at(j)]).sum();
            for j in 0..n {
                out[at(j)] = yd[at(j)] * (gd[at(j)] - dot);
            }
        }
    }
    Tensor::from_parts(y.shape().to_vec(), out)
}

pub fn permute<T: Scalar>(x: &Tensor<T>, axes: &[usize]) -> Result<Tensor<T>> {
    let r = x.rank();
    let mut seen = vec![false; r];
    if axes.len() != r || axes.iter().any(|&a| a >= r || std::mem::replace(&mut seen[a], true)) {
        return Err(dim_err(format!("{axes:?} is not a permutation of {r} axes")));
    }
    let in_strides = strides(x.shape());
    let out_shape: Vec<usize> = axes.iter().map(|&a| x.shape()[a]).collect();
    let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let total = x.numel();
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0; r];
    let mut off = 0usize;
    let d = x.data();
    for _ in 0..total {
        out.push(d[off]);
        for j in (0..r).rev() {
            idx[j] += 1;
            off += src_strides[j];
            if idx[j] < out_shape[j] {
                break;
            }
            off -= src_strides[j] * out_shape[j];
            idx[j] = 0;
        }
    }
    Ok(Tensor::from_parts(out_shape, out))
}

pub fn inverse_permutation(axes: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; axes.len()];
    for (i, &a) in axes.iter().enumerate() {
        inv[a] = i;
    }
    inv
}

pub fn concat<T: Scalar>(parts: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
    let first = parts.first().ok_or_else(|| dim_err("concat of zero tensors"))?;
    let (outer, _, inner) = split_axis(first.shape(), axis)?;
    let mut total = 0;
    for p in parts {
        let ok = p.rank() == first.rank()
            && p.shape().iter().zip(first.shape()).enumerate().all(|(i, (a, b))| i == axis || a == b);
        if !ok {
            return Err(dim_err(format!(
                "concat along axis {axis}: {:?} incompatible with {:?}",
                p.shape(),
                first.shape()
            )));
        }
        total += p.shape()[axis];
    }
    let mut out = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for p in parts {
            let n = p.shape()[axis];
            out.extend_from_slice(&p.data()[o * n * inner..(o + 1) * n * inner]);
        }
    }
    let mut shape = first.shape().to_vec();
    shape[axis] = total;
    Ok(Tensor::from_parts(shape, out))
}

/// Splits a gradient of a concatenation back into per-part gradients.
pub fn split<T: Scalar>(g: &Tensor<T>, axis: usize, sizes: &[usize]) -> Vec<Tensor<T>> {
    let (outer, total, inner) = split_axis(g.shape(), axis).expect("validated in forward");
    let mut start = 0;
    sizes
        .iter()
        .map(|&n| {
            let mut data = Vec::with_capacity(outer * n * inner);
            for o in 0..outer {
                let base = (o * total + start) * inner;
                data.extend_from_slice(&g.data()[base..base + n * inner]);
            }
            start += n;
            let mut shape = g.shape().to_vec();
            shape[axis] = n;
            Tensor::from_parts(shape, data)
        })
        .collect()
}

/// Source coordinate of nearest-neighbour resampling from `n_in` to `n_out`.
#[inline]
fn nearest(o: usize, n_in: usize, n_out: usize) -> usize {
    (o * n_in / n_out).min(n_in - 1)
}

fn resize_map(shape: &[usize], grid: [usize; 3]) -> Result<Vec<usize>> {
    if shape.len() != 5 {
        return Err(dim_err(format!("resize expects [B,C,D,H,W], got {shape:?}")));
    }
    if grid.contains(&0) {
        return Err(dim_err(format!("resize target grid {grid:?} has a zero extent")));
    }
    let (planes, d, h, w) = (shape[0] * shape[1], shape[2], shape[3], shape[4]);
    let [od, oh, ow] = grid;
    let mut map = Vec::with_capacity(planes * od * oh * ow);
    for p in 0..planes {
        for z in 0..od {
            let zi = nearest(z, d, od);
            for y in 0..oh {
                let yi = nearest(y, h, oh);
                for x in 0..ow {
                    map.push(((p * d + zi) * h + yi) * w + nearest(x, w, ow));
                }
            }
        }
    }
    Ok(map)
}

pub fn resize_nearest3d<T: Scalar>(x: &Tensor<T>, grid: [usize; 3]) -> Result<Tensor<T>> {
    let map = resize_map(x.shape(), grid)?;
    let s = x.shape();
    Ok(Tensor::from_parts(
        vec![s[0], s[1], grid[0], grid[1], grid[2]],
        map.iter().map(|&i| x.data()[i]).collect(),
    ))
}

pub fn resize_nearest3d_backward<T: Scalar>(in_shape: &[usize], g: &Tensor<T>) -> Tensor<T> {
    let gs = g.shape();
    let map = resize_map(in_shape, [gs[2], gs[3], gs[4]]).expect("validated in forward");
    let mut out = vec![T::zero(); numel(in_shape)];
    for (&i, &v) in map.iter().zip(g.data()) {
        out[i] += v;
    }
    Tensor::from_parts(in_shape.to_vec(), out)
}

/// For each element of a tensor of shape `full`, the flat index of the
/// element of `small` it reads when `small` is broadcast along its unit axes.
pub(crate) fn broadcast_map(full: &[usize], small: &[usize]) -> Result<Vec<usize>> {
    if full.len() != small.len() || full.iter().zip(small).any(|(&f, &s)| s != f && s != 1) {
        return Err(dim_err(format!("cannot broadcast {small:?} to {full:?}")));
    }
    let ss = strides(small);
    let eff: Vec<usize> = small.iter().zip(&ss).map(|(&d, &s)| if d == 1 { 0 } else { s }).collect();
    let total = numel(full);
    let mut map = Vec::with_capacity(total);
    let mut idx = vec![0; full.len()];
    let mut off = 0;
    for _ in 0..total {
        map.push(off);
        for j in (0..full.len()).rev() {
            idx[j] += 1;
            off += eff[j];
            if idx[j] < full[j] {
                break;
            }
            off -= eff[j] * full[j];
            idx[j] = 0;
        }
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permute_round_trip() {
        let x = Tensor::<f64>::from_fn(&[2, 3, 4], |i| i as f64);
        let axes = [2, 0, 1];
        let y = permute(&x, &axes).unwrap();
        assert_eq!(y.shape(), &[4, 2, 3]);
        assert_eq!(y.get(&[3, 1, 2]).unwrap(), x.get(&[1, 2, 3]).unwrap());
        assert_eq!(permute(&y, &inverse_permutation(&axes)).unwrap(), x);
        assert!(permute(&x, &[0, 0, 1]).is_err());
    }

    #[test]
    fn concat_then_split() {
        let a = Tensor::<f64>::from_fn(&[2, 1, 3], |i| i as f64);
        let b = Tensor::<f64>::from_fn(&[2, 2, 3], |i| 100.0 + i as f64);
        let c = concat(&[&a, &b], 1).unwrap();
        assert_eq!(c.shape(), &[2, 3, 3]);
        assert_eq!(c.get(&[1, 0, 2]).unwrap(), 5.0);
        assert_eq!(c.get(&[1, 2, 0]).unwrap(), 109.0);
        let parts = split(&c, 1, &[1, 2]);
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
    }

    #[test]
    fn resize_nearest_doubles() {
        let x = Tensor::<f64>::from_fn(&[1, 1, 1, 2, 2], |i| i as f64);
        let y = resize_nearest3d(&x, [2, 4, 4]).unwrap();
        assert_eq!(y.get(&[0, 0, 1, 3, 2]).unwrap(), 3.0);
        assert_eq!(y.get(&[0, 0, 0, 1, 2]).unwrap(), 1.0);
        let g: Tensor<f64> = resize_nearest3d_backward(x.shape(), &Tensor::ones(&[1, 1, 2, 4, 4]));
        assert_eq!(g.data(), &[8.0; 4]);
    }

    #[test]
    fn max_ties_pick_first() {
        let x = Tensor::<f64>::from_f64(&[1, 3], &[2.0, 5.0, 5.0]).unwrap();
        let (m, arg) = max_axis(&x, 1).unwrap();
        assert_eq!(m.data(), &[5.0]);
        assert_eq!(arg, vec![1]);
    }
}
