//! Multimodal multiscale cross-attention fusion for volumetric images and
//! clinical tables, built on a small float tensor kernel with reverse-mode
//! differentiation.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the
//! `*F64`/`*F32` aliases below fix the precision. Verification and the
//! command-line tools run at `f64`.

pub mod autograd;
pub mod e3d_msca;
pub mod encoders;
pub mod error;
pub mod gradcheck;
pub mod io;
pub mod kernels;
pub mod layers;
pub mod model;
pub mod msca;
pub mod params;
pub mod scalar;
pub mod tensor;
pub mod training;

pub use autograd::{PoolMode, Tape, Var};
pub use error::{Error, Result};
pub use kernels::Conv3dSpec;
pub use params::{ParamId, ParamStore};
pub use scalar::Scalar;

pub type TensorF64 = tensor::Tensor<f64>;
pub type TensorF32 = tensor::Tensor<f32>;
pub type TapeF64 = autograd::Tape<f64>;
pub type TapeF32 = autograd::Tape<f32>;
pub type ParamStoreF64 = params::ParamStore<f64>;
pub type ParamStoreF32 = params::ParamStore<f32>;
