//! Kolmogorov–Arnold layers: every input–output edge carries a learnable
//! B-spline plus a linear base term,
//! `y_j = Σ_i (w_ij·x_i + Σ_g c_ijg·B_g(x_i))`.

use rand::Rng;

use crate::autograd::{Tape, Var};
use crate::error::{dim_err, Result};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::spline::SplineGrid;

pub const DEFAULT_DEGREE: usize = 3;
pub const DEFAULT_GRID: usize = 8;
pub const DEFAULT_RANGE: f64 = 3.0;

/// Initial spline coefficients are drawn from ±this bound.
const COEFF_INIT: f64 = 0.1;

#[derive(Clone, Debug)]
pub struct KanLayerParams {
    /// `[n_in, n_out]`
    pub base: ParamId,
    /// `[n_in · n_basis, n_out]`, row `i·n_basis + g` for input `i`, basis `g`.
    pub coeffs: ParamId,
    pub n_in: usize,
    pub n_out: usize,
    pub grid: SplineGrid,
}

impl KanLayerParams {
    pub fn init<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        n_in: usize,
        n_out: usize,
        grid: SplineGrid,
        rng: &mut R,
    ) -> Self {
        let base = store.add_uniform(format!("{name}.base"), &[n_in, n_out], n_in, rng);
        let coeffs = store.add(
            format!("{name}.coeffs"),
            Tensor::uniform(&[n_in * grid.num_basis(), n_out], COEFF_INIT, rng),
        );
        Self { base, coeffs, n_in, n_out, grid }
    }
}

/// Expands `x [B, n]` into spline features `[B, n · n_basis]`.
pub fn spline_features<T: Scalar>(tape: &mut Tape<T>, x: Var, grid: &SplineGrid) -> Result<Var> {
    let s = tape.shape(x).to_vec();
    if s.len() != 2 {
        return Err(dim_err(format!("spline features expect [B, n], got {s:?}")));
    }
    let nb = grid.num_basis();
    let mut vals = Vec::with_capacity(s[0] * s[1] * nb);
    let mut ders = Vec::with_capacity(s[0] * s[1] * nb);
    for &v in tape.value(x).data() {
        let (b, d) = grid.basis_with_grad(v);
        vals.extend(b);
        ders.extend(d);
    }
    let out = Tensor::new(vec![s[0], s[1] * nb], vals)?;
    tape.record("spline_features", out, &[x], move |c| {
        let g = c.grad.data();
        let data = g
            .chunks(nb)
            .zip(ders.chunks(nb))
            .map(|(gc, dc)| gc.iter().zip(dc).map(|(&a, &b)| a * b).sum())
            .collect();
        vec![Some(Tensor::from_parts(c.inputs[0].shape().to_vec(), data))]
    })
}

pub fn kan_layer_forward<T: Scalar>(tape: &mut Tape<T>, store: &ParamStore<T>, x: Var, p: &KanLayerParams) -> Result<Var> {
    if tape.shape(x).len() != 2 || tape.shape(x)[1] != p.n_in {
        return Err(dim_err(format!("KAN layer expects [B, {}], got {:?}", p.n_in, tape.shape(x))));
    }
    let base = tape.param(store, p.base);
    let coeffs = tape.param(store, p.coeffs);
    let lin = tape.matmul(x, base)?;
    let feats = spline_features(tape, x, &p.grid)?;
    let spl = tape.matmul(feats, coeffs)?;
    tape.add(lin, spl)
}
