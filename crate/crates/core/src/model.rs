//! Full classifier: image and tabular encoders, a fusion stage selected by
//! [`FusionMode`], and logistic heads.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore};

use crate::autograd::{Tape, Var};
use crate::encoders::backbone::{image_encode, BackboneConfig, BackboneParams};
use crate::encoders::kan::{DEFAULT_DEGREE, DEFAULT_GRID, DEFAULT_RANGE};
use crate::encoders::spline::SplineGrid;
use crate::encoders::tabular::{tabular_encode, TabularEncoder, TabularSchema};
use crate::encoders::head_logits;
use crate::error::{Error, Result};
use crate::layers::Linear;
use crate::msca::{
    bsf_merge, fuse_scale, pyramid_project, CrossAttnParams, MscaParams, DEFAULT_DIMS, DEFAULT_HEADS,
    DEFAULT_TOKEN_DIM,
};
use crate::params::ParamStore;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FusionMode {
    /// Pyramid cross-attention with scale fusion.
    Msca,
    /// A single bidirectional cross-attention at the full feature width.
    CrossAttention,
    /// Mean of the per-modality head logits.
    LateFusion,
    /// Image encoder and its head only.
    ImageOnly,
}

impl FusionMode {
    pub const ALL: [FusionMode; 4] = [Self::Msca, Self::CrossAttention, Self::LateFusion, Self::ImageOnly];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Msca => "msca",
            Self::CrossAttention => "cross_attention",
            Self::LateFusion => "late_fusion",
            Self::ImageOnly => "image_only",
        }
    }

    pub fn uses_tabular(self) -> bool {
        self != Self::ImageOnly
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown fusion mode '{s}' (expected msca, cross_attention, late_fusion or image_only)")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub schema: TabularSchema,
    pub kan_hidden: usize,
    pub kan_degree: usize,
    pub kan_grid: usize,
    pub kan_range: f64,
    pub pyramid_dims: [usize; 3],
    pub token_dim: usize,
    pub heads: usize,
    pub fusion: FusionMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            backbone: BackboneConfig::default(),
            schema: TabularSchema::default(),
            kan_hidden: 64,
            kan_degree: DEFAULT_DEGREE,
            kan_grid: DEFAULT_GRID,
            kan_range: DEFAULT_RANGE,
            pyramid_dims: DEFAULT_DIMS,
            token_dim: DEFAULT_TOKEN_DIM,
            heads: DEFAULT_HEADS,
            fusion: FusionMode::Msca,
        }
    }
}

impl ModelConfig {
    pub fn feature_dim(&self) -> usize {
        self.backbone.feature_dim
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        if self.kan_hidden == 0 {
            return Err(Error::Config("kan_hidden must be positive".into()));
        }
        SplineGrid::uniform(self.kan_degree, self.kan_grid, self.kan_range)?;
        if self.fusion == FusionMode::Msca && self.pyramid_dims[0] != self.feature_dim() {
            return Err(Error::Config(format!(
                "first pyramid dim {} must equal the feature dim {}",
                self.pyramid_dims[0],
                self.feature_dim()
            )));
        }
        if self.fusion == FusionMode::CrossAttention && !self.feature_dim().is_multiple_of(self.token_dim) {
            return Err(Error::Config(format!(
                "feature dim {} is not a multiple of token width {}",
                self.feature_dim(),
                self.token_dim
            )));
        }
        Ok(())
    }
}

/// A module invocation observed by [`Model::forward_traced`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ModuleCall {
    ImageEncode,
    TabularEncode,
    PyramidProject,
    FuseScale { dim: usize },
    BsfMerge,
    ImageHead,
    TabularHead,
    FusionHead,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub image: BackboneParams,
    pub tabular: Option<TabularEncoder>,
    pub msca: Option<MscaParams>,
    /// `(image→tabular, tabular→image)` at the full feature width.
    pub cross: Option<(CrossAttnParams, CrossAttnParams)>,
    pub fusion_head: Option<Linear>,
    pub image_head: Option<Linear>,
    pub tabular_head: Option<Linear>,
}

impl Model {
    /// Registers only the parameters the configured fusion mode uses.
    pub fn init<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let d = config.feature_dim();
        let mode = config.fusion;
        let image = BackboneParams::init(store, "image", config.backbone.clone(), rng)?;
        let tabular = if mode.uses_tabular() {
            let grid = SplineGrid::uniform(config.kan_degree, config.kan_grid, config.kan_range)?;
            Some(TabularEncoder::init(store, "tabular", config.schema.width(), config.kan_hidden, d, &grid, rng))
        } else {
            None
        };
        let msca = (mode == FusionMode::Msca)
            .then(|| MscaParams::init(store, "msca", d, config.pyramid_dims, config.token_dim, config.heads, rng))
            .transpose()?;
        let cross = if mode == FusionMode::CrossAttention {
            let t = config.token_dim;
            Some((
                CrossAttnParams::init(store, "cross.img2tab", t, t, config.heads, rng)?,
                CrossAttnParams::init(store, "cross.tab2img", t, t, config.heads, rng)?,
            ))
        } else {
            None
        };
        let fused = matches!(mode, FusionMode::Msca | FusionMode::CrossAttention);
        let fusion_head = fused.then(|| Linear::init(store, "fusion_head", d, 1, true, rng));
        let image_head =
            matches!(mode, FusionMode::LateFusion | FusionMode::ImageOnly).then(|| Linear::init(store, "image_head", d, 1, true, rng));
        let tabular_head = (mode == FusionMode::LateFusion).then(|| Linear::init(store, "tabular_head", d, 1, true, rng));
        Ok(Self { config, image, tabular, msca, cross, fusion_head, image_head, tabular_head })
    }

    pub fn mode(&self) -> FusionMode {
        self.config.fusion
    }

    /// Logits `[B]`. `tab` may be `None` only in image-only mode.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        volume: Var,
        tab: Option<Var>,
        train_rng: Option<&mut dyn RngCore>,
    ) -> Result<Var> {
        self.forward_traced(tape, store, volume, tab, train_rng, &mut Vec::new())
    }

    pub fn forward_traced<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        volume: Var,
        tab: Option<Var>,
        train_rng: Option<&mut dyn RngCore>,
        trace: &mut Vec<ModuleCall>,
    ) -> Result<Var> {
        let img = image_encode(tape, store, volume, &self.image, train_rng)?;
        trace.push(ModuleCall::ImageEncode);
        let tab_feat = match (&self.tabular, tab) {
            (Some(enc), Some(t)) => {
                let f = tabular_encode(tape, store, t, enc)?;
                trace.push(ModuleCall::TabularEncode);
                Some(f)
            }
            (Some(_), None) => {
                return Err(Error::Contract(format!("fusion mode {} needs a tabular batch", self.mode())))
            }
            (None, _) => None,
        };
        match self.mode() {
            FusionMode::Msca => {
                let p = self.msca.as_ref().expect("msca params");
                let pairs = pyramid_project(tape, store, img, tab_feat.expect("tabular"), &p.pyramid)?;
                trace.push(ModuleCall::PyramidProject);
                let mut levels = Vec::with_capacity(3);
                for (s, (ti, tt)) in pairs.into_iter().enumerate() {
                    levels.push(fuse_scale(tape, store, ti, tt, &p.img2tab[s], &p.tab2img[s])?);
                    trace.push(ModuleCall::FuseScale { dim: p.pyramid.levels[s].dim });
                }
                let m = bsf_merge(tape, store, levels[0], levels[1], &p.bsf[0])?;
                trace.push(ModuleCall::BsfMerge);
                let fused = bsf_merge(tape, store, m, levels[2], &p.bsf[1])?;
                trace.push(ModuleCall::BsfMerge);
                let z = head_logits(tape, store, fused, self.fusion_head.as_ref().expect("fusion head"))?;
                trace.push(ModuleCall::FusionHead);
                Ok(z)
            }
            FusionMode::CrossAttention => {
                let (i2t, t2i) = self.cross.as_ref().expect("cross params");
                let d = self.config.feature_dim();
                let t = self.config.token_dim;
                let b = tape.shape(img)[0];
                let ti = tape.reshape(img, &[b, d / t, t])?;
                let tt = tape.reshape(tab_feat.expect("tabular"), &[b, d / t, t])?;
                let fused = fuse_scale(tape, store, ti, tt, i2t, t2i)?;
                trace.push(ModuleCall::FuseScale { dim: d });
                let z = head_logits(tape, store, fused, self.fusion_head.as_ref().expect("fusion head"))?;
                trace.push(ModuleCall::FusionHead);
                Ok(z)
            }
            FusionMode::LateFusion => {
                let zi = head_logits(tape, store, img, self.image_head.as_ref().expect("image head"))?;
                trace.push(ModuleCall::ImageHead);
                let zt = head_logits(tape, store, tab_feat.expect("tabular"), self.tabular_head.as_ref().expect("tabular head"))?;
                trace.push(ModuleCall::TabularHead);
                let s = tape.add(zi, zt)?;
                tape.scale(s, T::lit(0.5))
            }
            FusionMode::ImageOnly => {
                let z = head_logits(tape, store, img, self.image_head.as_ref().expect("image head"))?;
                trace.push(ModuleCall::ImageHead);
                Ok(z)
            }
        }
    }

    /// Probabilities `[B]` in (0, 1).
    pub fn predict<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        volume: Var,
        tab: Option<Var>,
        train_rng: Option<&mut dyn RngCore>,
    ) -> Result<Var> {
        let z = self.forward(tape, store, volume, tab, train_rng)?;
        tape.sigmoid(z)
    }
}
