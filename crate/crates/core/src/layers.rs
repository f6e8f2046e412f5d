//! Parameterised building blocks: dense and convolutional layers.

use rand::Rng;

use crate::autograd::{Tape, Var};
use crate::error::{dim_err, Result};
use crate::kernels::Conv3dSpec;
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;

/// `y = x·W + b` with `W: [in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn init<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let weight = store.add_xavier_uniform(format!("{name}.weight"), &[in_dim, out_dim], in_dim, out_dim, rng);
        let bias = bias.then(|| store.add_zeros(format!("{name}.bias"), &[out_dim]));
        Self { weight, bias, in_dim, out_dim }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        if tape.shape(x).last() != Some(&self.in_dim) {
            return Err(dim_err(format!("linear expects trailing dim {}, got {:?}", self.in_dim, tape.shape(x))));
        }
        let w = tape.param(store, self.weight);
        let b = self.bias.map(|b| tape.param(store, b));
        tape.linear(x, w, b)
    }
}

/// A 3D convolution with its weights.
#[derive(Clone, Debug)]
pub struct ConvLayer {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub spec: Conv3dSpec,
}

impl ConvLayer {
    pub fn init<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        spec: Conv3dSpec,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let weight = store.add_he_uniform(format!("{name}.weight"), &spec.weight_shape(), spec.fan_in(), rng);
        let bias = bias.then(|| store.add_zeros(format!("{name}.bias"), &[spec.out_channels]));
        Self { weight, bias, spec }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = self.bias.map(|b| tape.param(store, b));
        tape.conv3d(x, w, b, self.spec)
    }
}
