//! Central-difference verification of tape gradients.

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const DEFAULT_EPS: f64 = 1e-5;

/// Relative error between an analytic and a numeric derivative, floored so
/// that two near-zero values compare as equal.
pub fn rel_err<T: Scalar>(analytic: T, numeric: T) -> T {
    (analytic - numeric).abs() / T::lit(1e-8).max(analytic.abs() + numeric.abs())
}

fn eval_scalar<T: Scalar, F>(f: &F, x: &Tensor<T>, track: bool) -> Result<(Tape<T>, Var, Var)>
where
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let xv = if track { tape.leaf(x.clone()) } else { tape.constant(x.clone()) };
    let out = f(&mut tape, xv)?;
    if tape.value(out).numel() != 1 {
        return Err(Error::Contract(format!(
            "grad_check needs a scalar-valued function, got shape {:?}",
            tape.shape(out)
        )));
    }
    Ok((tape, xv, out))
}

/// Analytic gradient of `f` at `x`.
pub fn analytic_grad<T: Scalar, F>(f: &F, x: &Tensor<T>) -> Result<Tensor<T>>
where
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    let (mut tape, xv, out) = eval_scalar(f, x, true)?;
    tape.backward(out)?;
    Ok(tape.grad(xv).cloned().unwrap_or_else(|| Tensor::zeros(x.shape())))
}

/// Central-difference gradient of `f` at `x`, one coordinate at a time.
pub fn numeric_grad<T: Scalar, F>(f: &F, x: &Tensor<T>, eps: T) -> Result<Tensor<T>>
where
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    let two = T::lit(2.0);
    let mut g = Tensor::zeros(x.shape());
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let (t, _, o) = eval_scalar(f, &probe, false)?;
        let plus = t.value(o).data()[0];
        probe.data_mut()[i] = orig - eps;
        let (t, _, o) = eval_scalar(f, &probe, false)?;
        let minus = t.value(o).data()[0];
        probe.data_mut()[i] = orig;
        g.data_mut()[i] = (plus - minus) / (two * eps);
    }
    Ok(g)
}

/// Maximum relative error between the tape gradient of `f` at `x` and its
/// central-difference estimate, over all coordinates of `x`.
///
/// `f` receives a fresh tape and the variable holding `x`; it must return a
/// single-element variable.
pub fn grad_check<T: Scalar, F>(f: F, x: &Tensor<T>, eps: T) -> Result<T>
where
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    let analytic = analytic_grad(&f, x)?;
    let numeric = numeric_grad(&f, x, eps)?;
    Ok(analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| rel_err(a, n))
        .fold(T::zero(), T::max))
}
