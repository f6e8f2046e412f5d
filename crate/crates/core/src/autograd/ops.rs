use crate::error::{dim_err, Error, Result};
use crate::kernels::conv::{conv3d_backward_input, conv3d_backward_params, conv3d_forward, Conv3dSpec};
use crate::kernels::layout::{
    self, broadcast_map, inverse_permutation, resize_nearest3d_backward, softmax_backward, split_axis,
};
use crate::kernels::matmul::{matmul, matmul_backward};
use crate::scalar::{stable_sigmoid, Scalar};
use crate::tensor::Tensor;

use super::{Tape, Var};

/// Spatial reduction used by [`Tape::global_pool3d`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolMode {
    Avg,
    Max,
}

/// Probability clamp applied before the logarithms of the BCE loss.
pub const BCE_CLAMP: f64 = 1e-7;

impl<T: Scalar> Tape<T> {
    fn check_same(&self, a: Var, b: Var, op: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(dim_err(format!("{op}: shapes {:?} and {:?} differ", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b, "add")?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        self.record("add", v, &[a, b], |c| vec![Some(c.grad.clone()), Some(c.grad.clone())])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b, "sub")?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        self.record("sub", v, &[a, b], |c| vec![Some(c.grad.clone()), Some(c.grad.map(|g| -g))])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b, "mul")?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        self.record("mul", v, &[a, b], |c| {
            vec![
                c.needs[0].then(|| c.grad.zip_map(c.inputs[1], |g, y| g * y).unwrap()),
                c.needs[1].then(|| c.grad.zip_map(c.inputs[0], |g, x| g * x).unwrap()),
            ]
        })
    }

    /// `a + b` where `b` has the rank of `a` and unit extents on broadcast axes.
    pub fn add_bcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let map = broadcast_map(self.shape(a), self.shape(b))?;
        let (av, bv) = (self.value(a), self.value(b));
        let v = Tensor::from_parts(
            av.shape().to_vec(),
            av.data().iter().zip(&map).map(|(&x, &j)| x + bv.data()[j]).collect(),
        );
        self.record("add_bcast", v, &[a, b], move |c| {
            let gb = c.needs[1].then(|| {
                let mut acc = vec![T::zero(); c.inputs[1].numel()];
                for (&g, &j) in c.grad.data().iter().zip(&map) {
                    acc[j] += g;
                }
                Tensor::from_parts(c.inputs[1].shape().to_vec(), acc)
            });
            vec![Some(c.grad.clone()), gb]
        })
    }

    /// `a ⊙ b` where `b` has the rank of `a` and unit extents on broadcast axes.
    pub fn mul_bcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let map = broadcast_map(self.shape(a), self.shape(b))?;
        let (av, bv) = (self.value(a), self.value(b));
        let v = Tensor::from_parts(
            av.shape().to_vec(),
            av.data().iter().zip(&map).map(|(&x, &j)| x * bv.data()[j]).collect(),
        );
        self.record("mul_bcast", v, &[a, b], move |c| {
            let (ad, bd, gd) = (c.inputs[0].data(), c.inputs[1].data(), c.grad.data());
            let ga = c.needs[0].then(|| {
                Tensor::from_parts(
                    c.inputs[0].shape().to_vec(),
                    gd.iter().zip(&map).map(|(&g, &j)| g * bd[j]).collect(),
                )
            });
            let gb = c.needs[1].then(|| {
                let mut acc = vec![T::zero(); bd.len()];
                for ((&g, &x), &j) in gd.iter().zip(ad).zip(&map) {
                    acc[j] += g * x;
                }
                Tensor::from_parts(c.inputs[1].shape().to_vec(), acc)
            });
            vec![ga, gb]
        })
    }

    pub fn scale(&mut self, a: Var, s: T) -> Result<Var> {
        let v = self.value(a).map(|x| x * s);
        self.record("scale", v, &[a], move |c| vec![Some(c.grad.map(|g| g * s))])
    }

    pub fn add_scalar(&mut self, a: Var, s: T) -> Result<Var> {
        let v = self.value(a).map(|x| x + s);
        self.record("add_scalar", v, &[a], |c| vec![Some(c.grad.clone())])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(stable_sigmoid);
        self.record("sigmoid", v, &[a], |c| {
            vec![Some(c.grad.zip_map(c.output, |g, s| g * s * (T::one() - s)).unwrap())]
        })
    }

    /// `x · sigmoid(x)`.
    pub fn silu(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| x * stable_sigmoid(x));
        self.record("silu", v, &[a], |c| {
            let d = c.inputs[0].map(|x| {
                let s = stable_sigmoid(x);
                s * (T::one() + x * (T::one() - s))
            });
            vec![Some(c.grad.zip_map(&d, |g, d| g * d).unwrap())]
        })
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let v = layout::softmax(self.value(a), axis)?;
        self.record("softmax", v, &[a], move |c| vec![Some(softmax_backward(c.output, c.grad, axis))])
    }

    /// Batched matrix product; leading dimensions broadcast.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = matmul(self.value(a), self.value(b))?;
        self.record("matmul", v, &[a, b], |c| {
            let (ga, gb) = matmul_backward(c.inputs[0], c.inputs[1], c.grad, c.needs[0], c.needs[1]);
            vec![ga, gb]
        })
    }

    /// `x · w + b` for `x [.., K]`, `w [K, M]`, `b [M]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        let Some(b) = b else { return Ok(y) };
        let m = *self.shape(y).last().expect("matmul output has rank ≥ 2");
        if self.shape(b) != [m] {
            return Err(dim_err(format!("linear bias {:?} should be [{m}]", self.shape(b))));
        }
        let mut bshape = vec![1; self.shape(y).len()];
        *bshape.last_mut().unwrap() = m;
        let b = self.reshape(b, &bshape)?;
        self.add_bcast(y, b)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).reshape(shape)?;
        self.record("reshape", v, &[a], |c| vec![Some(c.grad.reshape(c.inputs[0].shape()).unwrap())])
    }

    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let v = layout::permute(self.value(a), axes)?;
        let inv = inverse_permutation(axes);
        self.record("permute", v, &[a], move |c| vec![Some(layout::permute(c.grad, &inv).unwrap())])
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let v = {
            let vals: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
            layout::concat(&vals, axis)?
        };
        let sizes: Vec<usize> = parts.iter().map(|&p| self.shape(p)[axis]).collect();
        self.record("concat", v, parts, move |c| layout::split(c.grad, axis, &sizes).into_iter().map(Some).collect())
    }

    pub fn conv3d(&mut self, x: Var, w: Var, b: Option<Var>, spec: Conv3dSpec) -> Result<Var> {
        let v = conv3d_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), &spec)?;
        let parents: Vec<Var> = [x, w].into_iter().chain(b).collect();
        self.record("conv3d", v, &parents, move |c| {
            let gx = c.needs[0].then(|| conv3d_backward_input(c.grad, c.inputs[0].shape(), c.inputs[1], &spec));
            let (gw, gb) = if c.needs[1..].iter().any(|&n| n) {
                let (gw, gb) = conv3d_backward_params(c.grad, c.inputs[0], &spec);
                (Some(gw), Some(gb))
            } else {
                (None, None)
            };
            let mut out = vec![gx, gw];
            if c.inputs.len() == 3 {
                out.push(gb);
            }
            out
        })
    }

    /// Mean along `axis`, keeping it with extent one.
    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let v = layout::mean_axis(self.value(a), axis)?;
        self.record("mean_axis", v, &[a], move |c| {
            let shape = c.inputs[0].shape();
            let (outer, n, inner) = split_axis(shape, axis).unwrap();
            let scale = T::one() / T::from_usize_lossy(n);
            let g = c.grad.data();
            let data = (0..outer * n * inner).map(|i| g[(i / (n * inner)) * inner + i % inner] * scale).collect();
            vec![Some(Tensor::from_parts(shape.to_vec(), data))]
        })
    }

    /// Max along `axis`, keeping it with extent one. The gradient flows to the
    /// first maximal element in row-major order.
    pub fn max_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let (v, arg) = layout::max_axis(self.value(a), axis)?;
        self.record("max_axis", v, &[a], move |c| {
            let shape = c.inputs[0].shape();
            let (_, n, inner) = split_axis(shape, axis).unwrap();
            let mut data = vec![T::zero(); c.inputs[0].numel()];
            for (i, (&g, &j)) in c.grad.data().iter().zip(&arg).enumerate() {
                data[((i / inner) * n + j) * inner + i % inner] += g;
            }
            vec![Some(Tensor::from_parts(shape.to_vec(), data))]
        })
    }

    /// Per-channel reduction over all spatial positions: `[B,C,D,H,W] → [B,C,1,1,1]`.
    pub fn global_pool3d(&mut self, x: Var, mode: PoolMode) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 5 {
            return Err(dim_err(format!("global_pool3d expects [B,C,D,H,W], got {s:?}")));
        }
        let flat = self.reshape(x, &[s[0], s[1], s[2] * s[3] * s[4]])?;
        let r = match mode {
            PoolMode::Avg => self.mean_axis(flat, 2)?,
            PoolMode::Max => self.max_axis(flat, 2)?,
        };
        self.reshape(r, &[s[0], s[1], 1, 1, 1])
    }

    pub fn resize_nearest3d(&mut self, x: Var, grid: [usize; 3]) -> Result<Var> {
        let v = layout::resize_nearest3d(self.value(x), grid)?;
        self.record("resize_nearest3d", v, &[x], |c| {
            vec![Some(resize_nearest3d_backward(c.inputs[0].shape(), c.grad))]
        })
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let v = Tensor::scalar(self.value(a).sum());
        self.record("sum", v, &[a], |c| vec![Some(Tensor::full(c.inputs[0].shape(), c.grad.data()[0]))])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = T::from_usize_lossy(self.value(a).numel());
        let s = self.sum(a)?;
        self.scale(s, T::one() / n)
    }

    /// Elementwise product with a constant mask.
    pub fn mul_const(&mut self, a: Var, mask: &Tensor<T>) -> Result<Var> {
        let m = self.constant(mask.clone());
        self.mul(a, m)
    }

    /// Mean binary cross-entropy of probabilities against {0,1} labels, with
    /// probabilities clamped to `[1e-7, 1 − 1e-7]`.
    pub fn bce_loss(&mut self, probs: Var, labels: &[T]) -> Result<Var> {
        let p = self.value(probs);
        if p.numel() != labels.len() {
            return Err(dim_err(format!("bce: {} probabilities vs {} labels", p.numel(), labels.len())));
        }
        if let Some(bad) = labels.iter().find(|&&y| y != T::zero() && y != T::one()) {
            return Err(Error::Data(format!("label {bad} is not in {{0,1}}")));
        }
        let lo = T::lit(BCE_CLAMP);
        let hi = T::one() - lo;
        let n = T::from_usize_lossy(labels.len());
        let total: T = p
            .data()
            .iter()
            .zip(labels)
            .map(|(&q, &y)| {
                let q = q.max(lo).min(hi);
                y * q.ln() + (T::one() - y) * (T::one() - q).ln()
            })
            .sum();
        let labels = labels.to_vec();
        self.record("bce_loss", Tensor::scalar(-total / n), &[probs], move |c| {
            let g0 = c.grad.data()[0];
            let data = c.inputs[0]
                .data()
                .iter()
                .zip(&labels)
                .map(|(&q, &y)| {
                    if q < lo || q > hi {
                        T::zero()
                    } else {
                        -(y / q - (T::one() - y) / (T::one() - q)) / n * g0
                    }
                })
                .collect();
            vec![Some(Tensor::from_parts(c.inputs[0].shape().to_vec(), data))]
        })
    }
}
