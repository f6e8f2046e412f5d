//! Direct 3D cross-correlation with zero padding and channel groups.

use rayon::prelude::*;

use crate::error::{dim_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::im2col;

/// Geometry of a 3D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv3dSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    pub groups: usize,
}

impl Conv3dSpec {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: [usize; 3],
        stride: [usize; 3],
        padding: [usize; 3],
        groups: usize,
    ) -> Result<Self> {
        let spec = Self { in_channels, out_channels, kernel, stride, padding, groups };
        spec.validate()?;
        Ok(spec)
    }

    /// Cubic kernel, uniform padding, ungrouped.
    pub fn cubic(in_channels: usize, out_channels: usize, k: usize, stride: [usize; 3], pad: usize) -> Result<Self> {
        Self::new(in_channels, out_channels, [k; 3], stride, [pad; 3], 1)
    }

    /// Channel-preserving depthwise convolution with "same" padding.
    pub fn depthwise(channels: usize, k: usize) -> Result<Self> {
        if k.is_multiple_of(2) {
            return Err(Error::Config(format!("depthwise kernel {k} must be odd for same padding")));
        }
        Self::new(channels, channels, [k; 3], [1; 3], [k / 2; 3], channels)
    }

    pub fn pointwise(in_channels: usize, out_channels: usize) -> Result<Self> {
        Self::cubic(in_channels, out_channels, 1, [1; 3], 0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 || self.groups == 0 {
            return Err(Error::Config(format!("degenerate convolution {self:?}")));
        }
        if !self.in_channels.is_multiple_of(self.groups) || !self.out_channels.is_multiple_of(self.groups) {
            return Err(dim_err(format!(
                "channels {}→{} not divisible by groups {}",
                self.in_channels, self.out_channels, self.groups
            )));
        }
        if self.kernel.contains(&0) || self.stride.contains(&0) {
            return Err(Error::Config(format!("zero kernel or stride in {self:?}")));
        }
        Ok(())
    }

    pub fn is_depthwise(&self) -> bool {
        self.groups == self.in_channels && self.in_channels == self.out_channels
    }

    pub fn weight_shape(&self) -> [usize; 5] {
        let [kd, kh, kw] = self.kernel;
        [self.out_channels, self.in_channels / self.groups, kd, kh, kw]
    }

    pub fn fan_in(&self) -> usize {
        let [_, cg, kd, kh, kw] = self.weight_shape();
        cg * kd * kh * kw
    }

    /// Output grid for an input grid; every extent must be at least one.
    pub fn output_grid(&self, grid: [usize; 3]) -> Result<[usize; 3]> {
        let mut out = [0; 3];
        for a in 0..3 {
            let padded = grid[a] + 2 * self.padding[a];
            if padded < self.kernel[a] {
                return Err(Error::Config(format!(
                    "kernel {:?} larger than padded input grid {grid:?} (padding {:?})",
                    self.kernel, self.padding
                )));
            }
            out[a] = (padded - self.kernel[a]) / self.stride[a] + 1;
        }
        Ok(out)
    }
}

pub(crate) struct ConvGeometry {
    pub batch: usize,
    pub in_grid: [usize; 3],
    pub out_grid: [usize; 3],
}

pub(crate) fn check<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &Conv3dSpec,
) -> Result<ConvGeometry> {
    spec.validate()?;
    let s = input.shape();
    if s.len() != 5 {
        return Err(dim_err(format!("conv3d input must be [B,C,D,H,W], got {s:?}")));
    }
    if s[1] != spec.in_channels {
        return Err(dim_err(format!(
            "conv3d input {s:?} has {} channels, spec expects {}",
            s[1], spec.in_channels
        )));
    }
    if weight.shape() != spec.weight_shape() {
        return Err(dim_err(format!(
            "conv3d weight {:?} does not match expected {:?}",
            weight.shape(),
            spec.weight_shape()
        )));
    }
    if let Some(b) = bias {
        if b.shape() != [spec.out_channels] {
            return Err(dim_err(format!("conv3d bias {:?} should be [{}]", b.shape(), spec.out_channels)));
        }
    }
    let in_grid = [s[2], s[3], s[4]];
    let out_grid = spec.output_grid(in_grid)?;
    Ok(ConvGeometry { batch: s[0], in_grid, out_grid })
}

/// Maps an output coordinate plus kernel tap to an input coordinate, if inside.
#[inline(always)]
pub(crate) fn src(o: usize, k: usize, stride: usize, pad: usize, n: usize) -> Option<usize> {
    let p = o * stride + k;
    if p < pad || p - pad >= n {
        None
    } else {
        Some(p - pad)
    }
}

pub fn conv3d_forward_direct<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &Conv3dSpec,
) -> Result<Tensor<T>> {
    let g = check(input, weight, bias, spec)?;
    let [id, ih, iw] = g.in_grid;
    let [od, oh, ow] = g.out_grid;
    let [kd, kh, kw] = spec.kernel;
    let [sd, sh, sw] = spec.stride;
    let [pd, ph, pw] = spec.padding;
    let cin_g = spec.in_channels / spec.groups;
    let cout_g = spec.out_channels / spec.groups;
    let in_vol = id * ih * iw;
    let out_vol = od * oh * ow;
    let kvol = kd * kh * kw;
    let x = input.data();
    let w = weight.data();
    let mut out = vec![T::zero(); g.batch * spec.out_channels * out_vol];

    out.par_chunks_mut(out_vol).enumerate().for_each(|(plane, o)| {
        let b = plane / spec.out_channels;
        let co = plane % spec.out_channels;
        let group = co / cout_g;
        let bias_v = bias.map_or(T::zero(), |t| t.data()[co]);
        o.iter_mut().for_each(|v| *v = bias_v);
        for cl in 0..cin_g {
            let ci = group * cin_g + cl;
            let xin = &x[(b * spec.in_channels + ci) * in_vol..][..in_vol];
            let wk = &w[(co * cin_g + cl) * kvol..][..kvol];
            for a in 0..kd {
                for bb in 0..kh {
                    for c in 0..kw {
                        let wv = wk[(a * kh + bb) * kw + c];
                        if wv == T::zero() {
                            continue;
                        }
                        for z in 0..od {
                            let Some(zi) = src(z, a, sd, pd, id) else { continue };
                            for y in 0..oh {
                                let Some(yi) = src(y, bb, sh, ph, ih) else { continue };
                                let orow = &mut o[(z * oh + y) * ow..][..ow];
                                let irow = &xin[(zi * ih + yi) * iw..][..iw];
                                for (xo, ov) in orow.iter_mut().enumerate() {
                                    if let Some(xi) = src(xo, c, sw, pw, iw) {
                                        *ov += wv * irow[xi];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    });
    Tensor::new(vec![g.batch, spec.out_channels, od, oh, ow], out)
}

/// Gradient of a conv3d output with respect to its input.
pub fn conv3d_backward_input_direct<T: Scalar>(
    grad_out: &Tensor<T>,
    input_shape: &[usize],
    weight: &Tensor<T>,
    spec: &Conv3dSpec,
) -> Tensor<T> {
    let (id, ih, iw) = (input_shape[2], input_shape[3], input_shape[4]);
    let gs = grad_out.shape();
    let (od, oh, ow) = (gs[2], gs[3], gs[4]);
    let [kd, kh, kw] = spec.kernel;
    let [sd, sh, sw] = spec.stride;
    let [pd, ph, pw] = spec.padding;
    let cin_g = spec.in_channels / spec.groups;
    let cout_g = spec.out_channels / spec.groups;
    let in_vol = id * ih * iw;
    let out_vol = od * oh * ow;
    let kvol = kd * kh * kw;
    let go = grad_out.data();
    let w = weight.data();
    let mut gin = vec![T::zero(); input_shape[0] * spec.in_channels * in_vol];

    gin.par_chunks_mut(in_vol).enumerate().for_each(|(plane, gi)| {
        let b = plane / spec.in_channels;
        let ci = plane % spec.in_channels;
        let group = ci / cin_g;
        let cl = ci % cin_g;
        for co in group * cout_g..(group + 1) * cout_g {
            let gplane = &go[(b * spec.out_channels + co) * out_vol..][..out_vol];
            let wk = &w[(co * cin_g + cl) * kvol..][..kvol];
            for a in 0..kd {
                for bb in 0..kh {
                    for c in 0..kw {
                        let wv = wk[(a * kh + bb) * kw + c];
                        if wv == T::zero() {
                            continue;
                        }
                        for z in 0..od {
                            let Some(zi) = src(z, a, sd, pd, id) else { continue };
                            for y in 0..oh {
                                let Some(yi) = src(y, bb, sh, ph, ih) else { continue };
                                let grow = &gplane[(z * oh + y) * ow..][..ow];
                                let irow = &mut gi[(zi * ih + yi) * iw..][..iw];
                                for (xo, &gv) in grow.iter().enumerate() {
                                    if let Some(xi) = src(xo, c, sw, pw, iw) {
                                        irow[xi] += wv * gv;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    });
    Tensor::from_parts(input_shape.to_vec(), gin)
}

/// Gradients of a conv3d output with respect to weight and bias.
pub fn conv3d_backward_params_direct<T: Scalar>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    spec: &Conv3dSpec,
) -> (Tensor<T>, Tensor<T>) {
    let s = input.shape();
    let (batch, id, ih, iw) = (s[0], s[2], s[3], s[4]);
    let gs = grad_out.shape();
    let (od, oh, ow) = (gs[2], gs[3], gs[4]);
    let [kd, kh, kw] = spec.kernel;
    let [sd, sh, sw] = spec.stride;
    let [pd, ph, pw] = spec.padding;
    let cin_g = spec.in_channels / spec.groups;
    let cout_g = spec.out_channels / spec.groups;
    let in_vol = id * ih * iw;
    let out_vol = od * oh * ow;
    let kvol = kd * kh * kw;
    let go = grad_out.data();
    let x = input.data();
    let mut gw = vec![T::zero(); spec.out_channels * cin_g * kvol];

    gw.par_chunks_mut(cin_g * kvol).enumerate().for_each(|(co, gwc)| {
        let group = co / cout_g;
        for b in 0..batch {
            let gplane = &go[(b * spec.out_channels + co) * out_vol..][..out_vol];
            for cl in 0..cin_g {
                let ci = group * cin_g + cl;
                let xin = &x[(b * spec.in_channels + ci) * in_vol..][..in_vol];
                for a in 0..kd {
                    for bb in 0..kh {
                        for c in 0..kw {
                            let mut acc = T::zero();
                            for z in 0..od {
                                let Some(zi) = src(z, a, sd, pd, id) else { continue };
                                for y in 0..oh {
                                    let Some(yi) = src(y, bb, sh, ph, ih) else { continue };
                                    let grow = &gplane[(z * oh + y) * ow..][..ow];
                                    let irow = &xin[(zi * ih + yi) * iw..][..iw];
                                    for (xo, &gv) in grow.iter().enumerate() {
                                        if let Some(xi) = src(xo, c, sw, pw, iw) {
                                            acc += gv * irow[xi];
                                        }
                                    }
                                }
                            }
                            gwc[cl * kvol + (a * kh + bb) * kw + c] += acc;
                        }
                    }
                }
            }
        }
    });

    let mut gb = vec![T::zero(); spec.out_channels];
    for b in 0..batch {
        for (co, acc) in gb.iter_mut().enumerate() {
            *acc += go[(b * spec.out_channels + co) * out_vol..][..out_vol].iter().copied().sum::<T>();
        }
    }
    (
        Tensor::from_parts(spec.weight_shape().to_vec(), gw),
        Tensor::from_parts(vec![spec.out_channels], gb),
    )
}

/// Grouped convolutions run the direct loops; dense ones (`groups == 1`) the
/// im2col + GEMM path.
pub fn conv3d_forward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &Conv3dSpec,
) -> Result<Tensor<T>> {
    if spec.groups == 1 {
        let g = check(input, weight, bias, spec)?;
        Ok(im2col::forward(input, weight, bias, spec, &g))
    } else {
        conv3d_forward_direct(input, weight, bias, spec)
    }
}

pub fn conv3d_backward_input<T: Scalar>(
    grad_out: &Tensor<T>,
    input_shape: &[usize],
    weight: &Tensor<T>,
    spec: &Conv3dSpec,
) -> Tensor<T> {
    if spec.groups == 1 {
        im2col::backward_input(grad_out, input_shape, weight, spec)
    } else {
        conv3d_backward_input_direct(grad_out, input_shape, weight, spec)
    }
}

pub fn conv3d_backward_params<T: Scalar>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    spec: &Conv3dSpec,
) -> (Tensor<T>, Tensor<T>) {
    if spec.groups == 1 {
        im2col::backward_params(grad_out, input, spec)
    } else {
        conv3d_backward_params_direct(grad_out, input, spec)
    }
}
