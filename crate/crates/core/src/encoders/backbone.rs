//! Three-stage strided 3D convolutional pyramid with per-level E3D-MSCA
//! attention and a top-down BFPU cascade.
//!
//! ```text
//! x ─conv/2,4,4─ P1 ─conv/2─ P2 ─conv/2─ P3          (SiLU after each conv)
//!                │           │           │
//!             E3D-MSCA    E3D-MSCA    E3D-MSCA
//!                │           │           └─resize→ BFPU(P2, ·) ─1×1×1→ R2
//!                │           └──────────────────────┘
//!                └──────────────── BFPU(P1, resize(R2)) ─1×1×1→ R1
//! R1 ─global avg pool─ linear → feature ─dropout (train only)
//! ```

use rand::{Rng, RngCore};

use crate::autograd::{PoolMode, Tape, Var};
use crate::e3d_msca::{bfpu_fuse, e3d_msca_forward, BfpuParams, E3dMscaParams, DEFAULT_REDUCTION};
use crate::error::{Error, Result};
use crate::kernels::Conv3dSpec;
use crate::layers::{ConvLayer, Linear};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const STAGE_STRIDES: [[usize; 3]; 3] = [[2, 4, 4], [2, 2, 2], [2, 2, 2]];
/// Cubic kernel sizes; the stem kernel is wider than its in-plane stride so
/// that no input column is skipped. Padding is `kernel / 2`.
pub const STAGE_KERNELS: [usize; 3] = [5, 3, 3];
pub const FULL_GEOMETRY: [usize; 3] = [12, 192, 192];
pub const TOY_GEOMETRY: [usize; 3] = [4, 16, 16];

#[derive(Clone, Debug, PartialEq)]
pub struct BackboneConfig {
    /// Input grid `(D, H, W)`.
    pub geometry: [usize; 3],
    /// Channel widths of P1, P2, P3.
    pub widths: [usize; 3],
    /// Channels after each post-BFPU 1×1×1 reduction.
    pub reduce_width: usize,
    pub feature_dim: usize,
    pub use_e3d_msca: bool,
    pub reduction: usize,
    /// Dropout probability before the feature output; 0 disables it.
    pub dropout: f64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            geometry: FULL_GEOMETRY,
            widths: [64, 128, 256],
            reduce_width: 128,
            feature_dim: 256,
            use_e3d_msca: true,
            reduction: DEFAULT_REDUCTION,
            dropout: 0.5,
        }
    }
}

impl BackboneConfig {
    /// Grids of P1, P2, P3 for the configured input geometry.
    pub fn level_grids(&self) -> Result<[[usize; 3]; 3]> {
        let mut grid = self.geometry;
        let mut out = [[0; 3]; 3];
        for (s, (stride, k)) in STAGE_STRIDES.iter().zip(STAGE_KERNELS).enumerate() {
            let next = Conv3dSpec::cubic(1, 1, k, *stride, k / 2)?.output_grid(grid)?;
            if next.iter().product::<usize>() >= grid.iter().product::<usize>() {
                return Err(Error::Config(format!(
                    "stage {} grid {next:?} does not shrink from {grid:?}; input geometry {:?} too small",
                    s + 1,
                    self.geometry
                )));
            }
            out[s] = next;
            grid = next;
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        if self.geometry.contains(&0) || self.widths.contains(&0) || self.reduce_width == 0 || self.feature_dim == 0 {
            return Err(Error::Config(format!("degenerate backbone configuration {self:?}")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} must lie in [0, 1)", self.dropout)));
        }
        self.level_grids().map(|_| ())
    }
}

#[derive(Clone, Debug)]
pub struct BackboneParams {
    pub config: BackboneConfig,
    pub stages: Vec<ConvLayer>,
    pub attention: Option<Vec<E3dMscaParams>>,
    /// `[BFPU(P2, P3↑), BFPU(P1, R2↑)]`
    pub bfpu: Vec<BfpuParams>,
    pub reduce: Vec<ConvLayer>,
    pub head: Linear,
}

impl BackboneParams {
    pub fn init<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        config: BackboneConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let [w1, w2, w3] = config.widths;
        let rw = config.reduce_width;
        let mut stages = Vec::new();
        let mut cin = 1;
        for (s, ((&w, stride), k)) in config.widths.iter().zip(STAGE_STRIDES).zip(STAGE_KERNELS).enumerate() {
            let spec = Conv3dSpec::cubic(cin, w, k, stride, k / 2)?;
            stages.push(ConvLayer::init(store, &format!("{name}.stage{}", s + 1), spec, true, rng));
            cin = w;
        }
        let attention = if config.use_e3d_msca {
            Some(
                config
                    .widths
                    .iter()
                    .enumerate()
                    .map(|(s, &w)| E3dMscaParams::init(store, &format!("{name}.e3d{}", s + 1), w, config.reduction, rng))
                    .collect::<Result<Vec<_>>>()?,
            )
        } else {
            None
        };
        let bfpu = vec![
            BfpuParams::init(store, &format!("{name}.bfpu2"), w2, w3, rng)?,
            BfpuParams::init(store, &format!("{name}.bfpu1"), w1, rw, rng)?,
        ];
        let reduce = vec![
            ConvLayer::init(store, &format!("{name}.reduce2"), Conv3dSpec::pointwise(w2 + w3, rw)?, true, rng),
            ConvLayer::init(store, &format!("{name}.reduce1"), Conv3dSpec::pointwise(w1 + rw, rw)?, true, rng),
        ];
        let head = Linear::init(store, &format!("{name}.head"), rw, config.feature_dim, true, rng);
        Ok(Self { config, stages, attention, bfpu, reduce, head })
    }
}

/// The three pyramid levels, after E3D-MSCA when enabled.
pub fn image_pyramid<T: Scalar>(tape: &mut Tape<T>, store: &ParamStore<T>, x: Var, p: &BackboneParams) -> Result<Vec<Var>> {
    let s = tape.shape(x);
    let g = p.config.geometry;
    if s.len() != 5 || s[1] != 1 || s[2..] != g {
        return Err(Error::Config(format!("volume batch {s:?} does not match configured geometry [B,1,{},{},{}]", g[0], g[1], g[2])));
    }
    let mut levels = Vec::with_capacity(3);
    let mut h = x;
    for (i, stage) in p.stages.iter().enumerate() {
        h = stage.forward(tape, store, h)?;
        h = tape.silu(h)?;
        let level = match &p.attention {
            Some(att) => e3d_msca_forward(tape, store, h, &att[i])?,
            None => h,
        };
        levels.push(level);
        h = level;
    }
    Ok(levels)
}

fn grid_of<T: Scalar>(tape: &Tape<T>, v: Var) -> [usize; 3] {
    let s = tape.shape(v);
    [s[2], s[3], s[4]]
}

/// Pooled `[B, reduce_width]` features before the head projection.
pub fn image_features<T: Scalar>(tape: &mut Tape<T>, store: &ParamStore<T>, x: Var, p: &BackboneParams) -> Result<Var> {
    let levels = image_pyramid(tape, store, x, p)?;
    let up3 = tape.resize_nearest3d(levels[2], grid_of(tape, levels[1]))?;
    let f2 = bfpu_fuse(tape, store, levels[1], up3, &p.bfpu[0])?;
    let r2 = p.reduce[0].forward(tape, store, f2)?;
    let up2 = tape.resize_nearest3d(r2, grid_of(tape, levels[0]))?;
    let f1 = bfpu_fuse(tape, store, levels[0], up2, &p.bfpu[1])?;
    let r1 = p.reduce[1].forward(tape, store, f1)?;
    let pooled = tape.global_pool3d(r1, PoolMode::Avg)?;
    let b = tape.shape(pooled)[0];
    tape.reshape(pooled, &[b, p.config.reduce_width])
}

/// Inverted dropout: keeps each unit with probability `1 − p` and rescales by `1/(1 − p)`.
pub fn dropout<T: Scalar>(tape: &mut Tape<T>, x: Var, p: f64, rng: &mut dyn RngCore) -> Result<Var> {
    if p <= 0.0 {
        return Ok(x);
    }
    let keep = T::lit(1.0 / (1.0 - p));
    let mask = Tensor::from_fn(tape.shape(x), |_| if rng.random_bool(1.0 - p) { keep } else { T::zero() });
    tape.mul_const(x, &mask)
}

/// `[B,1,D,H,W] → [B, feature_dim]`. Dropout is applied only when `train_rng` is given.
pub fn image_encode<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    x: Var,
    p: &BackboneParams,
    train_rng: Option<&mut dyn RngCore>,
) -> Result<Var> {
    let feats = image_features(tape, store, x, p)?;
    let out = p.head.forward(tape, store, feats)?;
    match train_rng {
        Some(rng) => dropout(tape, out, p.config.dropout, rng),
        None => Ok(out),
    }
}
