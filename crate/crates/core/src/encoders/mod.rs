//! Image and tabular encoders plus the sigmoid classification head.

pub mod backbone;
pub mod kan;
pub mod spline;
pub mod tabular;

pub use backbone::{image_encode, BackboneConfig, BackboneParams};
pub use kan::{kan_layer_forward, KanLayerParams};
pub use spline::SplineGrid;
pub use tabular::{tabular_encode, TabularEncoder, TabularSchema};

use crate::autograd::{Tape, Var};
use crate::error::Result;
use crate::layers::Linear;
use crate::params::ParamStore;
use crate::scalar::Scalar;

/// `[B, d] → [B]` logits of a single-output linear head.
pub fn head_logits<T: Scalar>(tape: &mut Tape<T>, store: &ParamStore<T>, x: Var, head: &Linear) -> Result<Var> {
    let z = head.forward(tape, store, x)?;
    let b = tape.shape(z)[0];
    tape.reshape(z, &[b])
}

/// `sigmoid(linear(fused))`, probabilities in (0, 1).
pub fn classify<T: Scalar>(tape: &mut Tape<T>, store: &ParamStore<T>, fused: Var, head: &Linear) -> Result<Var> {
    let z = head_logits(tape, store, fused, head)?;
    tape.sigmoid(z)
}
