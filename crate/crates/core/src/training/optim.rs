//! Plain stochastic gradient descent with coupled L2 weight decay.

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `w ← w − lr·(g + weight_decay·w)` in place.
pub fn sgd_update<T: Scalar>(w: &mut Tensor<T>, g: &Tensor<T>, lr: T, weight_decay: T) -> Result<()> {
    if w.shape() != g.shape() {
        return Err(Error::Contract(format!("gradient shape {:?} does not match parameter {:?}", g.shape(), w.shape())));
    }
    for (wi, &gi) in w.data_mut().iter_mut().zip(g.data()) {
        *wi = *wi - lr * (gi + weight_decay * *wi);
    }
    Ok(())
}

/// Applies [`sgd_update`] to every parameter that received a gradient.
/// Parameters absent from `grads` are left untouched.
pub fn sgd_step<T: Scalar>(store: &mut ParamStore<T>, grads: &[(ParamId, Tensor<T>)], lr: T, weight_decay: T) -> Result<()> {
    if lr <= T::zero() {
        return Err(Error::Config("learning rate must be positive".into()));
    }
    for (id, g) in grads {
        if !g.is_finite() {
            return Err(Error::NonFinite { op: "gradient" });
        }
        sgd_update(store.get_mut(*id), g, lr, weight_decay)?;
    }
    Ok(())
}
