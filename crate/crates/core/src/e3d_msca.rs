//! Efficient 3D multi-scale convolutional attention and the bidirectional
//! feedback fusion unit.
//!
//! The attention stack applies, in order, a channel gate (CAB), a spatial gate
//! (SAB) and a residual multi-kernel depthwise fusion (DCFB):
//!
//! ```text
//! E3D-MSCA(x) = DCFB(SAB(CAB(x)))
//! ```
//!
//! * CAB: `x ⊙ σ(MLP(avgpool(x)) + MLP(maxpool(x)))`, a shared two-layer MLP
//!   `C → C/r → C` with a SiLU in between, gate broadcast over D, H, W.
//! * SAB: `x ⊙ σ(conv7([mean_c(x), max_c(x)]))`, gate broadcast over channels.
//! * DCFB: `x + pw(dw1(x) + dw3(x) + dw5(x))` with depthwise kernels 1, 3, 5
//!   and a pointwise projection.
//!
//! BFPU fuses two feature maps on the same grid:
//!
//! ```text
//! F_mid = σ(conv_a(F_a) ⊙ conv_b(F_b))
//! F_out = [F_a + F_mid ⊙ F_a, F_b + F_mid' ⊙ F_b]
//! ```
//!
//! where `conv_b` projects `F_b` onto `C_a` channels and `F_mid'` is `F_mid`
//! itself when `C_a == C_b`, otherwise its channel mean.

use rand::Rng;

use crate::autograd::{PoolMode, Tape, Var};
use crate::error::{dim_err, Error, Result};
use crate::kernels::Conv3dSpec;
use crate::layers::ConvLayer;
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;

pub const DEFAULT_REDUCTION: usize = 16;
pub const SAB_KERNEL: usize = 7;
pub const DCFB_KERNELS: [usize; 3] = [1, 3, 5];

#[derive(Clone, Debug)]
pub struct CabParams {
    /// `[C, C/r]`
    pub mlp_w1: ParamId,
    /// `[C/r, C]`
    pub mlp_w2: ParamId,
    pub channels: usize,
    pub reduction: usize,
}

#[derive(Clone, Debug)]
pub struct SabParams {
    pub conv: ConvLayer,
}

#[derive(Clone, Debug)]
pub struct DcfbParams {
    pub depthwise: Vec<ConvLayer>,
    pub pointwise: ConvLayer,
}

#[derive(Clone, Debug)]
pub struct E3dMscaParams {
    pub cab: CabParams,
    pub sab: SabParams,
    pub dcfb: DcfbParams,
}

impl E3dMscaParams {
    pub fn init<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        reduction: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if reduction == 0 || !channels.is_multiple_of(reduction) {
            return Err(Error::Config(format!(
                "channel-attention reduction {reduction} must divide channel count {channels}"
            )));
        }
        let hidden = channels / reduction;
        let cab = CabParams {
            mlp_w1: store.add_uniform(format!("{name}.cab.w1"), &[channels, hidden], channels, rng),
            mlp_w2: store.add_uniform(format!("{name}.cab.w2"), &[hidden, channels], hidden, rng),
            channels,
            reduction,
        };
        let sab_spec = Conv3dSpec::cubic(2, 1, SAB_KERNEL, [1; 3], SAB_KERNEL / 2)?;
        let sab = SabParams { conv: ConvLayer::init(store, &format!("{name}.sab.conv"), sab_spec, true, rng) };
        let mut depthwise = Vec::new();
        for k in DCFB_KERNELS {
            let spec = Conv3dSpec::depthwise(channels, k)?;
            depthwise.push(ConvLayer::init(store, &format!("{name}.dcfb.dw{k}"), spec, true, rng));
        }
        let pointwise =
            ConvLayer::init(store, &format!("{name}.dcfb.pw"), Conv3dSpec::pointwise(channels, channels)?, true, rng);
        Ok(Self { cab, sab, dcfb: DcfbParams { depthwise, pointwise } })
    }

    pub fn channels(&self) -> usize {
        self.cab.channels
    }
}

fn check_rank5<T: Scalar>(tape: &Tape<T>, x: Var, what: &str) -> Result<[usize; 5]> {
    <[usize; 5]>::try_from(tape.shape(x))
        .map_err(|_| dim_err(format!("{what} expects [B,C,D,H,W], got {:?}", tape.shape(x))))
}

pub fn cab3d_forward<T: Scalar>(tape: &mut Tape<T>, store: &ParamStore<T>, x: Var, p: &E3dMscaParams) -> Result<Var> {
    let [b, c, ..] = check_rank5(tape, x, "channel attention")?;
    if c != p.cab.channels {
        return Err(dim_err(format!("channel attention built for {} channels, input has {c}", p.cab.channels)));
    }
    let w1 = tape.param(store, p.cab.mlp_w1);
    let w2 = tape.param(store, p.cab.mlp_w2);
    let mut logits = None;
    for mode in [PoolMode::Avg, PoolMode::Max] {
        let pooled = tape.global_pool3d(x, mode)?;
        let pooled = tape.reshape(pooled, &[b, c])?;
        let h = tape.matmul(pooled, w1)?;
        let h = tape.silu(h)?;
        let o = tape.matmul(h, w2)?;
        logits = Some(match logits {
            None => o,
            Some(acc) => tape.add(acc, o)?,
        });
    }
    let gate = tape.sigmoid(logits.expect("two pooling branches"))?;
    let gate = tape.reshape(gate, &[b, c, 1, 1, 1])?;
    tape.mul_bcast(x, gate)
}

/// The `[B,1,D,H,W]` spatial gate of the SAB.
pub fn sab3d_gate<T: Scalar>(tape: &mut Tape<T>, store: &ParamStore<T>, x: Var, p: &E3dMscaParams) -> Result<Var> {
    check_rank5(tape, x, "spatial attention")?;
    let mean = tape.mean_axis(x, 1)?;
    let max = tape.max_axis(x, 1)?;
    let maps = tape.concat(&[mean, max], 1)?;
    let logits = p.sab.conv.forward(tape, store, maps)?;
    tape.sigmoid(logits)
}

pub fn sab3d_forward<T: Scalar>(tape: &mut Tape<T>, store: &ParamStore<T>, x: Var, p: &E3dMscaParams) -> Result<Var> {
    let gate = sab3d_gate(tape, store, x, p)?;
    tape.mul_bcast(x, gate)
}

pub fn dcfb3d_forward<T: Scalar>(tape: &mut Tape<T>, store: &ParamStore<T>, x: Var, p: &E3dMscaParams) -> Result<Var> {
    let [_, c, ..] = check_rank5(tape, x, "depthwise fusion")?;
    if c != p.dcfb.pointwise.spec.in_channels {
        return Err(dim_err(format!(
            "depthwise fusion built for {} channels, input has {c}",
            p.dcfb.pointwise.spec.in_channels
        )));
    }
    let mut acc = None;
    for branch in &p.dcfb.depthwise {
        let y = branch.forward(tape, store, x)?;
        acc = Some(match acc {
            None => y,
            Some(a) => tape.add(a, y)?,
        });
    }
    let mixed = p.dcfb.pointwise.forward(tape, store, acc.expect("three depthwise branches"))?;
    tape.add(x, mixed)
}

pub fn e3d_msca_forward<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    x: Var,
    p: &E3dMscaParams,
) -> Result<Var> {
    let y = cab3d_forward(tape, store, x, p)?;
    let y = sab3d_forward(tape, store, y, p)?;
    dcfb3d_forward(tape, store, y, p)
}

#[derive(Clone, Debug)]
pub struct BfpuParams {
    pub conv_a: ConvLayer,
    pub conv_b: ConvLayer,
}

impl BfpuParams {
    pub fn init<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        ca: usize,
        cb: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            conv_a: ConvLayer::init(store, &format!("{name}.conv_a"), Conv3dSpec::cubic(ca, ca, 3, [1; 3], 1)?, true, rng),
            conv_b: ConvLayer::init(store, &format!("{name}.conv_b"), Conv3dSpec::cubic(cb, ca, 3, [1; 3], 1)?, true, rng),
        })
    }

    pub fn channels(&self) -> (usize, usize) {
        (self.conv_a.spec.in_channels, self.conv_b.spec.in_channels)
    }
}

/// The gate `F_mid` with `C_a` channels.
pub fn bfpu_gate<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    fa: Var,
    fb: Var,
    p: &BfpuParams,
) -> Result<Var> {
    let sa = check_rank5(tape, fa, "bfpu")?;
    let sb = check_rank5(tape, fb, "bfpu")?;
    if sa[0] != sb[0] || sa[2..] != sb[2..] {
        return Err(dim_err(format!(
            "bfpu inputs {sa:?} and {sb:?} must share batch and grid; resize the coarser map first"
        )));
    }
    let (ca, cb) = p.channels();
    if sa[1] != ca || sb[1] != cb {
        return Err(dim_err(format!("bfpu built for {ca}+{cb} channels, got {}+{}", sa[1], sb[1])));
    }
    let a = p.conv_a.forward(tape, store, fa)?;
    let b = p.conv_b.forward(tape, store, fb)?;
    let prod = tape.mul(a, b)?;
    tape.sigmoid(prod)
}

pub fn bfpu_fuse<T: Scalar>(tape: &mut Tape<T>, store: &ParamStore<T>, fa: Var, fb: Var, p: &BfpuParams) -> Result<Var> {
    let mid = bfpu_gate(tape, store, fa, fb, p)?;
    let ga = tape.mul(mid, fa)?;
    let out_a = tape.add(fa, ga)?;
    let (ca, cb) = p.channels();
    let gb = if ca == cb {
        tape.mul(mid, fb)?
    } else {
        let g = tape.mean_axis(mid, 1)?;
        tape.mul_bcast(fb, g)?
    };
    let out_b = tape.add(fb, gb)?;
    tape.concat(&[out_a, out_b], 1)
}
