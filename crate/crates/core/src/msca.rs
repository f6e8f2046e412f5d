//! Multiscale cross-attention fusion of an image vector and a tabular vector.
//!
//! Both vectors go through three consecutive linear reductions (the inverted
//! pyramid, 256 → 128 → 64 by default). At each level the reduced vectors are
//! cut into tokens of width `token_dim` and fused by bidirectional multi-head
//! cross-attention; the per-level results are then merged pairwise by
//! bidirectional scale fusion (BSF) back to the input width.

use rand::Rng;

use crate::autograd::{Tape, Var};
use crate::error::{dim_err, Error, Result};
use crate::layers::Linear;
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;

pub const DEFAULT_DIMS: [usize; 3] = [256, 128, 64];
pub const DEFAULT_TOKEN_DIM: usize = 16;
pub const DEFAULT_HEADS: usize = 4;

#[derive(Clone, Debug)]
pub struct PyramidLevel {
    pub dim: usize,
    pub token_count: usize,
    pub token_dim: usize,
    pub img_proj: Linear,
    pub tab_proj: Linear,
}

#[derive(Clone, Debug)]
pub struct ScalePyramid {
    pub levels: Vec<PyramidLevel>,
}

impl ScalePyramid {
    pub fn init<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        input_dim: usize,
        dims: [usize; 3],
        token_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if dims.windows(2).any(|w| w[0] <= w[1]) {
            return Err(Error::Config(format!("pyramid dims {dims:?} must be strictly decreasing")));
        }
        if token_dim == 0 {
            return Err(Error::Config("token width must be positive".into()));
        }
        let mut levels = Vec::with_capacity(3);
        let mut prev = input_dim;
        for (s, &dim) in dims.iter().enumerate() {
            if dim % token_dim != 0 {
                return Err(Error::Config(format!("pyramid dim {dim} is not a multiple of token width {token_dim}")));
            }
            levels.push(PyramidLevel {
                dim,
                token_count: dim / token_dim,
                token_dim,
                img_proj: Linear::init(store, &format!("{name}.l{s}.img"), prev, dim, true, rng),
                tab_proj: Linear::init(store, &format!("{name}.l{s}.tab"), prev, dim, true, rng),
            });
            prev = dim;
        }
        Ok(Self { levels })
    }

    pub fn input_dim(&self) -> usize {
        self.levels[0].img_proj.in_dim
    }
}

/// Projects both modalities through the pyramid, returning per level the
/// `[B, token_count, token_dim]` image and tabular token sets.
pub fn pyramid_project<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    img: Var,
    tab: Var,
    p: &ScalePyramid,
) -> Result<Vec<(Var, Var)>> {
    let d0 = p.input_dim();
    for (v, what) in [(img, "image"), (tab, "tabular")] {
        let s = tape.shape(v);
        if s.len() != 2 || s[1] != d0 {
            return Err(Error::Config(format!("{what} feature {s:?} does not match pyramid input width {d0}")));
        }
    }
    let b = tape.shape(img)[0];
    let (mut xi, mut xt) = (img, tab);
    let mut out = Vec::with_capacity(p.levels.len());
    for level in &p.levels {
        xi = level.img_proj.forward(tape, store, xi)?;
        xt = level.tab_proj.forward(tape, store, xt)?;
        let ti = tape.reshape(xi, &[b, level.token_count, level.token_dim])?;
        let tt = tape.reshape(xt, &[b, level.token_count, level.token_dim])?;
        out.push((ti, tt));
    }
    Ok(out)
}

/// Projections of one cross-attention direction.
#[derive(Clone, Debug)]
pub struct CrossAttnParams {
    /// `[D_q, D_q]`
    pub w_q: ParamId,
    /// `[D_kv, D_q]`
    pub w_k: ParamId,
    /// `[D_kv, D_q]`
    pub w_v: ParamId,
    pub heads: usize,
    pub q_dim: usize,
    pub kv_dim: usize,
}

impl CrossAttnParams {
    pub fn init<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        q_dim: usize,
        kv_dim: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || !q_dim.is_multiple_of(heads) {
            return Err(Error::Config(format!("{heads} heads do not divide query width {q_dim}")));
        }
        Ok(Self {
            w_q: store.add_xavier_uniform(format!("{name}.w_q"), &[q_dim, q_dim], q_dim, q_dim, rng),
            w_k: store.add_xavier_uniform(format!("{name}.w_k"), &[kv_dim, q_dim], kv_dim, q_dim, rng),
            w_v: store.add_xavier_uniform(format!("{name}.w_v"), &[kv_dim, q_dim], kv_dim, q_dim, rng),
            heads,
            q_dim,
            kv_dim,
        })
    }

    /// Per-head width `C = D_q / H`.
    pub fn head_dim(&self) -> usize {
        self.q_dim / self.heads
    }
}

/// `[B, T, H·C] → [B, H, T, C]`
fn split_heads<T: Scalar>(tape: &mut Tape<T>, x: Var, heads: usize) -> Result<Var> {
    let s = tape.shape(x).to_vec();
    let x = tape.reshape(x, &[s[0], s[1], heads, s[2] / heads])?;
    tape.permute(x, &[0, 2, 1, 3])
}

/// Scaled dot-product scores `Q_h K_hᵀ / √C` for `[B,H,N,C]` and `[B,H,M,C]`.
pub fn attention_logits<T: Scalar>(tape: &mut Tape<T>, q_heads: Var, k_heads: Var) -> Result<Var> {
    let c = *tape.shape(q_heads).last().ok_or_else(|| dim_err("attention on rank-0 tensor"))?;
    let kt = tape.permute(k_heads, &[0, 1, 3, 2])?;
    let s = tape.matmul(q_heads, kt)?;
    tape.scale(s, T::one() / T::from_usize_lossy(c).sqrt())
}

/// Cross-attention returning the output `[B,N,D_q]` and the attention
/// weights `[B,H,N,M]` (softmax over keys).
pub fn cross_attention_with_weights<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    q_tokens: Var,
    kv_tokens: Var,
    p: &CrossAttnParams,
) -> Result<(Var, Var)> {
    let qs = tape.shape(q_tokens).to_vec();
    let ks = tape.shape(kv_tokens).to_vec();
    if qs.len() != 3 || ks.len() != 3 || qs[0] != ks[0] {
        return Err(dim_err(format!("cross-attention expects [B,N,D_q] and [B,M,D_kv], got {qs:?} and {ks:?}")));
    }
    if qs[2] != p.q_dim || ks[2] != p.kv_dim {
        return Err(dim_err(format!(
            "cross-attention built for D_q={} D_kv={}, got {qs:?} and {ks:?}",
            p.q_dim, p.kv_dim
        )));
    }
    let (b, n) = (qs[0], qs[1]);
    let wq = tape.param(store, p.w_q);
    let wk = tape.param(store, p.w_k);
    let wv = tape.param(store, p.w_v);
    let q = tape.matmul(q_tokens, wq)?;
    let k = tape.matmul(kv_tokens, wk)?;
    let v = tape.matmul(kv_tokens, wv)?;
    let qh = split_heads(tape, q, p.heads)?;
    let kh = split_heads(tape, k, p.heads)?;
    let vh = split_heads(tape, v, p.heads)?;
    let logits = attention_logits(tape, qh, kh)?;
    let weights = tape.softmax(logits, 3)?;
    let o = tape.matmul(weights, vh)?;
    let o = tape.permute(o, &[0, 2, 1, 3])?;
    let o = tape.reshape(o, &[b, n, p.q_dim])?;
    Ok((o, weights))
}

pub fn cross_attention<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    q_tokens: Var,
    kv_tokens: Var,
    p: &CrossAttnParams,
) -> Result<Var> {
    cross_attention_with_weights(tape, store, q_tokens, kv_tokens, p).map(|(o, _)| o)
}

/// Bidirectional cross-attention at one scale: image queries attend to
/// tabular tokens and vice versa; both outputs are flattened and summed.
pub fn fuse_scale<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    img_tokens: Var,
    tab_tokens: Var,
    img2tab: &CrossAttnParams,
    tab2img: &CrossAttnParams,
) -> Result<Var> {
    let si = tape.shape(img_tokens).to_vec();
    let st = tape.shape(tab_tokens).to_vec();
    if si.len() != 3 || st.len() != 3 || si[0] != st[0] || si[1] * si[2] != st[1] * st[2] {
        return Err(Error::Config(format!("token sets {si:?} and {st:?} come from different pyramid levels")));
    }
    let o1 = cross_attention(tape, store, img_tokens, tab_tokens, img2tab)?;
    let o2 = cross_attention(tape, store, tab_tokens, img_tokens, tab2img)?;
    let dim = si[1] * si[2];
    let o1 = tape.reshape(o1, &[si[0], dim])?;
    let o2 = tape.reshape(o2, &[si[0], dim])?;
    tape.add(o1, o2)
}

#[derive(Clone, Debug)]
pub struct BsfParams {
    pub align_a: Linear,
    pub align_b: Linear,
}

impl BsfParams {
    pub fn init<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        dim_a: usize,
        dim_b: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            align_a: Linear::init(store, &format!("{name}.align_a"), dim_a, out_dim, true, rng),
            align_b: Linear::init(store, &format!("{name}.align_b"), dim_b, out_dim, true, rng),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.align_a.out_dim
    }
}

/// Aligned features `(u', v')` and dimensional-importance weights
/// `w = softmax(u' ⊙ v')` of a BSF merge.
pub fn bsf_importance<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    u: Var,
    v: Var,
    p: &BsfParams,
) -> Result<(Var, Var, Var)> {
    let ua = p.align_a.forward(tape, store, u)?;
    let va = p.align_b.forward(tape, store, v)?;
    let prod = tape.mul(ua, va)?;
    let w = tape.softmax(prod, 1)?;
    Ok((ua, va, w))
}

/// `w ⊙ (u' + v') · d_out / 2`. The rescale makes equal constant inputs a
/// fixed point regardless of `d_out`.
pub fn bsf_merge<T: Scalar>(tape: &mut Tape<T>, store: &ParamStore<T>, u: Var, v: Var, p: &BsfParams) -> Result<Var> {
    let (ua, va, w) = bsf_importance(tape, store, u, v, p)?;
    let sum = tape.add(ua, va)?;
    let weighted = tape.mul(w, sum)?;
    tape.scale(weighted, T::from_usize_lossy(p.out_dim()) / T::lit(2.0))
}

#[derive(Clone, Debug)]
pub struct MscaParams {
    pub pyramid: ScalePyramid,
    pub img2tab: Vec<CrossAttnParams>,
    pub tab2img: Vec<CrossAttnParams>,
    /// Merges (level 0, level 1) and then (that result, level 2).
    pub bsf: [BsfParams; 2],
}

impl MscaParams {
    pub fn init<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        input_dim: usize,
        dims: [usize; 3],
        token_dim: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let pyramid = ScalePyramid::init(store, &format!("{name}.pyramid"), input_dim, dims, token_dim, rng)?;
        let mut img2tab = Vec::new();
        let mut tab2img = Vec::new();
        for s in 0..3 {
            img2tab.push(CrossAttnParams::init(store, &format!("{name}.l{s}.img2tab"), token_dim, token_dim, heads, rng)?);
            tab2img.push(CrossAttnParams::init(store, &format!("{name}.l{s}.tab2img"), token_dim, token_dim, heads, rng)?);
        }
        let bsf = [
            BsfParams::init(store, &format!("{name}.bsf0"), dims[0], dims[1], input_dim, rng),
            BsfParams::init(store, &format!("{name}.bsf1"), input_dim, dims[2], input_dim, rng),
        ];
        Ok(Self { pyramid, img2tab, tab2img, bsf })
    }
}

/// Per-level fused vectors `[B, dim_s]` before scale fusion.
pub fn msca_levels<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    img: Var,
    tab: Var,
    p: &MscaParams,
) -> Result<Vec<Var>> {
    let pairs = pyramid_project(tape, store, img, tab, &p.pyramid)?;
    pairs
        .into_iter()
        .enumerate()
        .map(|(s, (ti, tt))| fuse_scale(tape, store, ti, tt, &p.img2tab[s], &p.tab2img[s]))
        .collect()
}

pub fn msca_forward<T: Scalar>(tape: &mut Tape<T>, store: &ParamStore<T>, img: Var, tab: Var, p: &MscaParams) -> Result<Var> {
    let levels = msca_levels(tape, store, img, tab, p)?;
    let m = bsf_merge(tape, store, levels[0], levels[1], &p.bsf[0])?;
    bsf_merge(tape, store, m, levels[2], &p.bsf[1])
}
