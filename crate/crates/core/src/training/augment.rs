//! Volume augmentation: in-plane rotation, slice sharpening and per-volume
//! normalisation. Volumes are `[.., D, H, W]` tensors; every slice of every
//! leading index is transformed independently.

use rand::Rng;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAX_ROTATION_DEG: f64 = 15.0;
pub const SHARPEN_PROB: f64 = 0.5;
pub const NORMALIZE_STD_FLOOR: f64 = 1e-6;
pub const SHARPEN_KERNEL: [[f64; 3]; 3] = [[0.0, -1.0, 0.0], [-1.0, 5.0, -1.0], [0.0, -1.0, 0.0]];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentConfig {
    pub rotate: bool,
    pub sharpen: bool,
    pub normalize: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { rotate: true, sharpen: true, normalize: true }
    }
}

fn plane<T: Scalar>(v: &Tensor<T>) -> (usize, usize) {
    let s = v.shape();
    assert!(s.len() >= 2, "volume must have at least two axes");
    (s[s.len() - 2], s[s.len() - 1])
}

fn map_slices<T: Scalar>(v: &Tensor<T>, f: impl Fn(&[T], &mut [T], usize, usize)) -> Tensor<T> {
    let (h, w) = plane(v);
    let mut out = Tensor::zeros(v.shape());
    for (src, dst) in v.data().chunks(h * w).zip(out.data_mut().chunks_mut(h * w)) {
        f(src, dst, h, w);
    }
    out
}

/// Rotates every slice by `angle_deg` about the slice centre with bilinear
/// sampling; samples falling outside the slice read as zero.
pub fn rotate_inplane<T: Scalar>(v: &Tensor<T>, angle_deg: f64) -> Tensor<T> {
    let (sin, cos) = angle_deg.to_radians().sin_cos();
    map_slices(v, |src, dst, h, w| {
        let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
        let at = |y: isize, x: isize| {
            if y < 0 || x < 0 || y as usize >= h || x as usize >= w {
                T::zero()
            } else {
                src[y as usize * w + x as usize]
            }
        };
        for y in 0..h {
            for x in 0..w {
                let (dy, dx) = (y as f64 - cy, x as f64 - cx);
                // Inverse map of the output pixel into the source slice.
                let sy = cos * dy - sin * dx + cy;
                let sx = sin * dy + cos * dx + cx;
                let (y0, x0) = (sy.floor(), sx.floor());
                let (fy, fx) = (T::lit(sy - y0), T::lit(sx - x0));
                let (y0, x0) = (y0 as isize, x0 as isize);
                let one = T::one();
                dst[y * w + x] = (one - fy) * ((one - fx) * at(y0, x0) + fx * at(y0, x0 + 1))
                    + fy * ((one - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1));
            }
        }
    })
}

/// Per-slice 3×3 Laplacian sharpening with zero padding.
pub fn sharpen<T: Scalar>(v: &Tensor<T>) -> Tensor<T> {
    map_slices(v, |src, dst, h, w| {
        for y in 0..h {
            for x in 0..w {
                let mut acc = T::zero();
                for (ky, row) in SHARPEN_KERNEL.iter().enumerate() {
                    for (kx, &k) in row.iter().enumerate() {
                        let (yy, xx) = (y + ky, x + kx);
                        if k != 0.0 && yy >= 1 && xx >= 1 && yy - 1 < h && xx - 1 < w {
                            acc += T::lit(k) * src[(yy - 1) * w + xx - 1];
                        }
                    }
                }
                dst[y * w + x] = acc;
            }
        }
    })
}

/// `(x − mean) / std` over the whole tensor, std floored.
pub fn normalize<T: Scalar>(v: &Tensor<T>) -> Tensor<T> {
    let n = T::from_usize_lossy(v.numel());
    let mean = v.sum() / n;
    let var = v.data().iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / n;
    let std = var.sqrt().max(T::lit(NORMALIZE_STD_FLOOR));
    v.map(|x| (x - mean) / std)
}

/// Training-time pipeline: random rotation in ±15°, sharpening with
/// probability ½, then normalisation, each gated by `cfg`.
pub fn augment<T: Scalar, R: Rng + ?Sized>(v: &Tensor<T>, cfg: &AugmentConfig, rng: &mut R) -> Tensor<T> {
    let mut out = v.clone();
    if cfg.rotate {
        let angle = rng.random_range(-MAX_ROTATION_DEG..=MAX_ROTATION_DEG);
        out = rotate_inplane(&out, angle);
    }
    if cfg.sharpen && rng.random_bool(SHARPEN_PROB) {
        out = sharpen(&out);
    }
    preprocess(&out, cfg)
}

/// The deterministic part applied at evaluation.
pub fn preprocess<T: Scalar>(v: &Tensor<T>, cfg: &AugmentConfig) -> Tensor<T> {
    if cfg.normalize {
        normalize(v)
    } else {
        v.clone()
    }
}
