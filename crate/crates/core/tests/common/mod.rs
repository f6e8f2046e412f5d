//! Independent reference implementations used as test oracles. None of these
//! call into the crate's kernels.

#![allow(dead_code)]

use mmfuse::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_t(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::uniform(shape, 1.0, &mut rng(seed))
}

pub fn naive_matmul(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            let mut s = 0.0;
            for p in 0..k {
                s += a[i * k + p] * b[p * m + j];
            }
            out[i * m + j] = s;
        }
    }
    out
}

/// Direct nested-loop grouped 3D cross-correlation with zero padding.
#[allow(clippy::too_many_arguments)]
pub fn direct_conv3d(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    bias: Option<&[f64]>,
    stride: [usize; 3],
    pad: [usize; 3],
    groups: usize,
) -> Tensor<f64> {
    let [b, cin, d, h, wd] = <[usize; 5]>::try_from(x.shape()).unwrap();
    let [cout, cg, kd, kh, kw] = <[usize; 5]>::try_from(w.shape()).unwrap();
    let od = (d + 2 * pad[0] - kd) / stride[0] + 1;
    let oh = (h + 2 * pad[1] - kh) / stride[1] + 1;
    let ow = (wd + 2 * pad[2] - kw) / stride[2] + 1;
    let og = cout / groups;
    let mut out = Tensor::zeros(&[b, cout, od, oh, ow]);
    for n in 0..b {
        for co in 0..cout {
            let g = co / og;
            for z in 0..od {
                for y in 0..oh {
                    for xx in 0..ow {
                        let mut s = bias.map_or(0.0, |bb| bb[co]);
                        for cl in 0..cg {
                            let ci = g * cg + cl;
                            assert!(ci < cin);
                            for a in 0..kd {
                                for bb in 0..kh {
                                    for c in 0..kw {
                                        let zi = (z * stride[0] + a) as isize - pad[0] as isize;
                                        let yi = (y * stride[1] + bb) as isize - pad[1] as isize;
                                        let xi = (xx * stride[2] + c) as isize - pad[2] as isize;
                                        if zi < 0 || yi < 0 || xi < 0 {
                                            continue;
                                        }
                                        let (zi, yi, xi) = (zi as usize, yi as usize, xi as usize);
                                        if zi >= d || yi >= h || xi >= wd {
                                            continue;
                                        }
                                        s += w.get(&[co, cl, a, bb, c]).unwrap()
                                            * x.get(&[n, ci, zi, yi, xi]).unwrap();
                                    }
                                }
                            }
                        }
                        let off = out.offset(&[n, co, z, y, xx]).unwrap();
                        out.data_mut()[off] = s;
                    }
                }
            }
        }
    }
    out
}

/// Cross-attention with every head and query unrolled into scalar loops.
/// `q [B,N,Dq]`, `kv [B,M,Dkv]`, `wq [Dq,Dq]`, `wk, wv [Dkv,Dq]`.
pub fn unrolled_cross_attention(
    q: &Tensor<f64>,
    kv: &Tensor<f64>,
    wq: &Tensor<f64>,
    wk: &Tensor<f64>,
    wv: &Tensor<f64>,
    heads: usize,
) -> Tensor<f64> {
    let (b, n, dq) = (q.shape()[0], q.shape()[1], q.shape()[2]);
    let (m, dkv) = (kv.shape()[1], kv.shape()[2]);
    let c = dq / heads;
    let proj = |x: &Tensor<f64>, bi: usize, t: usize, w: &Tensor<f64>, din: usize, col: usize| {
        (0..din).map(|i| x.get(&[bi, t, i]).unwrap() * w.get(&[i, col]).unwrap()).sum::<f64>()
    };
    let mut out = Tensor::zeros(&[b, n, dq]);
    for bi in 0..b {
        for h in 0..heads {
            for i in 0..n {
                let qh: Vec<f64> = (0..c).map(|cc| proj(q, bi, i, wq, dq, h * c + cc)).collect();
                let mut logits = Vec::with_capacity(m);
                for j in 0..m {
                    let mut dot = 0.0;
                    for cc in 0..c {
                        dot += qh[cc] * proj(kv, bi, j, wk, dkv, h * c + cc);
                    }
                    logits.push(dot / (c as f64).sqrt());
                }
                let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = logits.iter().map(|l| (l - mx).exp()).sum();
                for cc in 0..c {
                    let mut s = 0.0;
                    for j in 0..m {
                        s += (logits[j] - mx).exp() / z * proj(kv, bi, j, wv, dkv, h * c + cc);
                    }
                    let off = out.offset(&[bi, i, h * c + cc]).unwrap();
                    out.data_mut()[off] = s;
                }
            }
        }
    }
    out
}

/// Cox–de Boor recursion for basis function `i` of degree `k`.
pub fn cox_de_boor(knots: &[f64], i: usize, k: usize, x: f64) -> f64 {
    if k == 0 {
        let last = knots.len() - 1;
        let (lo, hi) = (knots[i], knots[i + 1]);
        return if (lo <= x && x < hi) || (x == knots[last] && hi == knots[last] && lo < hi) { 1.0 } else { 0.0 };
    }
    let mut v = 0.0;
    let d1 = knots[i + k] - knots[i];
    if d1 > 0.0 {
        v += (x - knots[i]) / d1 * cox_de_boor(knots, i, k - 1, x);
    }
    let d2 = knots[i + k + 1] - knots[i + 1];
    if d2 > 0.0 {
        v += (knots[i + k + 1] - x) / d2 * cox_de_boor(knots, i + 1, k - 1, x);
    }
    v
}

/// All-pairs AUROC with ties counted one half.
pub fn brute_auroc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, (&si, &li)) in scores.iter().zip(labels).enumerate() {
        if li != 1 {
            continue;
        }
        for (j, (&sj, &lj)) in scores.iter().zip(labels).enumerate() {
            if lj != 0 || i == j {
                continue;
            }
            den += 1.0;
            num += if si > sj {
                1.0
            } else if si == sj {
                0.5
            } else {
                0.0
            };
        }
    }
    (den > 0.0).then(|| num / den)
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

fn dims5(x: &Tensor<f64>) -> [usize; 5] {
    <[usize; 5]>::try_from(x.shape()).unwrap()
}

/// Channel gate: shared MLP (SiLU hidden) over per-channel mean and max.
pub fn cab_oracle(x: &Tensor<f64>, w1: &Tensor<f64>, w2: &Tensor<f64>) -> Tensor<f64> {
    let [b, c, d, h, w] = dims5(x);
    let vol = d * h * w;
    let hid = w1.shape()[1];
    let mlp = |v: &[f64]| -> Vec<f64> {
        let hv: Vec<f64> = (0..hid).map(|j| silu((0..c).map(|i| v[i] * w1.data()[i * hid + j]).sum())).collect();
        (0..c).map(|k| (0..hid).map(|j| hv[j] * w2.data()[j * c + k]).sum()).collect()
    };
    let mut out = x.clone();
    for bi in 0..b {
        let plane = |ci: usize| &x.data()[(bi * c + ci) * vol..][..vol];
        let avg: Vec<f64> = (0..c).map(|ci| plane(ci).iter().sum::<f64>() / vol as f64).collect();
        let mx: Vec<f64> = (0..c).map(|ci| plane(ci).iter().cloned().fold(f64::NEG_INFINITY, f64::max)).collect();
        let (ma, mm) = (mlp(&avg), mlp(&mx));
        for ci in 0..c {
            let g = sigmoid(ma[ci] + mm[ci]);
            for v in &mut out.data_mut()[(bi * c + ci) * vol..][..vol] {
                *v *= g;
            }
        }
    }
    out
}

/// Spatial gate: 7³ conv over [channel mean, channel max].
pub fn sab_oracle(x: &Tensor<f64>, w: &Tensor<f64>, bias: f64) -> Tensor<f64> {
    let [b, c, d, h, wd] = dims5(x);
    let vol = d * h * wd;
    let mut maps = Tensor::zeros(&[b, 2, d, h, wd]);
    for bi in 0..b {
        for p in 0..vol {
            let vals: Vec<f64> = (0..c).map(|ci| x.data()[(bi * c + ci) * vol + p]).collect();
            maps.data_mut()[(bi * 2) * vol + p] = vals.iter().sum::<f64>() / c as f64;
            maps.data_mut()[(bi * 2 + 1) * vol + p] = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        }
    }
    let k = w.shape()[2];
    let logits = direct_conv3d(&maps, w, Some(&[bias]), [1; 3], [k / 2; 3], 1);
    let mut out = x.clone();
    for bi in 0..b {
        for ci in 0..c {
            for p in 0..vol {
                out.data_mut()[(bi * c + ci) * vol + p] *= sigmoid(logits.data()[bi * vol + p]);
            }
        }
    }
    out
}

/// `x + pw(dw1(x) + dw3(x) + dw5(x))`; `dw` holds `(weight, bias)` per kernel.
pub fn dcfb_oracle(x: &Tensor<f64>, dw: &[(Tensor<f64>, Vec<f64>)], pw: &(Tensor<f64>, Vec<f64>)) -> Tensor<f64> {
    let c = x.shape()[1];
    let mut acc = Tensor::zeros(x.shape());
    for (w, b) in dw {
        let k = w.shape()[2];
        let y = direct_conv3d(x, w, Some(b), [1; 3], [k / 2; 3], c);
        acc = acc.zip_map(&y, |a, v| a + v).unwrap();
    }
    let mixed = direct_conv3d(&acc, &pw.0, Some(&pw.1), [1; 3], [0; 3], 1);
    x.zip_map(&mixed, |a, v| a + v).unwrap()
}

/// Gated two-scale fusion re-evaluated voxel by voxel.
pub fn bfpu_oracle(
    fa: &Tensor<f64>,
    fb: &Tensor<f64>,
    wa: &(Tensor<f64>, Vec<f64>),
    wb: &(Tensor<f64>, Vec<f64>),
) -> (Tensor<f64>, Tensor<f64>) {
    let [b, ca, d, h, w] = dims5(fa);
    let cb = fb.shape()[1];
    let vol = d * h * w;
    let a = direct_conv3d(fa, &wa.0, Some(&wa.1), [1; 3], [1; 3], 1);
    let bb = direct_conv3d(fb, &wb.0, Some(&wb.1), [1; 3], [1; 3], 1);
    let mid = a.zip_map(&bb, |x, y| sigmoid(x * y)).unwrap();
    let mut out = Tensor::zeros(&[b, ca + cb, d, h, w]);
    for bi in 0..b {
        for p in 0..vol {
            let m = |ci: usize| mid.data()[(bi * ca + ci) * vol + p];
            let mean_m = (0..ca).map(m).sum::<f64>() / ca as f64;
            for ci in 0..ca {
                let v = fa.data()[(bi * ca + ci) * vol + p];
                out.data_mut()[(bi * (ca + cb) + ci) * vol + p] = v + m(ci) * v;
            }
            for ci in 0..cb {
                let v = fb.data()[(bi * cb + ci) * vol + p];
                let g = if ca == cb { m(ci) } else { mean_m };
                out.data_mut()[(bi * (ca + cb) + ca + ci) * vol + p] = v + g * v;
            }
        }
    }
    (out, mid)
}

/// Gradient check of a scalar function of one stored parameter.
pub fn param_check(
    store: &mmfuse::ParamStore<f64>,
    id: mmfuse::ParamId,
    f: impl Fn(&mut mmfuse::Tape<f64>) -> mmfuse::Result<mmfuse::Var>,
) -> f64 {
    mmfuse::gradcheck::grad_check(
        |tape, p| {
            tape.bind_param(id, p);
            f(tape)
        },
        store.get(id),
        1e-5,
    )
    .unwrap()
}

/// Reduces `v` to a scalar with fixed random weights.
pub fn wsum(tape: &mut mmfuse::Tape<f64>, v: mmfuse::Var, seed: u64) -> mmfuse::Result<mmfuse::Var> {
    let r = tape.constant(rand_t(tape.shape(v), seed ^ 0xabcd));
    let p = tape.mul(v, r)?;
    tape.sum(p)
}

/// Like `param_check` but measures the worst absolute discrepancy against the
/// largest gradient entry. Deep stacks have parameters whose gradients are
/// many orders below the loss, where per-entry relative error only sees
/// finite-difference round-off.
pub fn param_check_scaled(
    store: &mmfuse::ParamStore<f64>,
    id: mmfuse::ParamId,
    f: impl Fn(&mut mmfuse::Tape<f64>) -> mmfuse::Result<mmfuse::Var>,
) -> f64 {
    let g = |tape: &mut mmfuse::Tape<f64>, p| {
        tape.bind_param(id, p);
        f(tape)
    };
    let a = mmfuse::gradcheck::analytic_grad(&g, store.get(id)).unwrap();
    let n = mmfuse::gradcheck::numeric_grad(&g, store.get(id), 1e-4).unwrap();
    let scale = a.data().iter().chain(n.data()).fold(0.0f64, |m, v| m.max(v.abs()));
    let worst = a.data().iter().zip(n.data()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    worst / scale.max(1e-300)
}
