//! Uniform B-spline bases on an extended knot grid.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Uniform knot grid covering `[-range, range]` with `size` intervals,
/// extended by `degree` knots on each side so that every point of the range
/// is covered by exactly `degree + 1` basis functions.
#[derive(Clone, Debug, PartialEq)]
pub struct SplineGrid {
    pub degree: usize,
    pub size: usize,
    pub range: f64,
    knots: Vec<f64>,
}

impl SplineGrid {
    pub fn uniform(degree: usize, size: usize, range: f64) -> Result<Self> {
        if size < degree + 1 {
            return Err(Error::Config(format!("spline grid size {size} must be at least degree + 1 = {}", degree + 1)));
        }
        if !(range > 0.0 && range.is_finite()) {
            return Err(Error::Config(format!("spline range {range} must be positive")));
        }
        let h = 2.0 * range / size as f64;
        let knots = (0..size + 2 * degree + 1).map(|i| -range + (i as f64 - degree as f64) * h).collect();
        Self::from_knots(degree, size, range, knots)
    }

    /// Grid with explicit knots; they must be non-decreasing and number
    /// `size + 2·degree + 1`.
    pub fn from_knots(degree: usize, size: usize, range: f64, knots: Vec<f64>) -> Result<Self> {
        if knots.len() != size + 2 * degree + 1 {
            return Err(Error::Config(format!(
                "expected {} knots for degree {degree} and grid {size}, got {}",
                size + 2 * degree + 1,
                knots.len()
            )));
        }
        if knots.windows(2).any(|w| !(w[0] <= w[1])) {
            return Err(Error::Config("knot vector must be non-decreasing".into()));
        }
        Ok(Self { degree, size, range, knots })
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn num_basis(&self) -> usize {
        self.size + self.degree
    }

    /// Index `j` of the knot interval `[t_j, t_{j+1})` containing `x`, after
    /// clamping `x` to the range. The right end maps to the last interval.
    fn span(&self, x: f64) -> usize {
        let (lo, hi) = (self.degree, self.degree + self.size - 1);
        let mut j = lo;
        while j < hi && x >= self.knots[j + 1] {
            j += 1;
        }
        j
    }

    fn clamp<T: Scalar>(&self, x: T) -> (T, bool) {
        let r = T::lit(self.range);
        if x < -r {
            (-r, true)
        } else if x > r {
            (r, true)
        } else {
            (x, false)
        }
    }

    /// Nonzero basis values of degree `p` at `x` in span `j`:
    /// `B_{j-p}, …, B_j`.
    fn local<T: Scalar>(&self, j: usize, x: T, p: usize) -> Vec<T> {
        let t = |i: usize| T::lit(self.knots[i]);
        let mut n = vec![T::zero(); p + 1];
        let mut left = vec![T::zero(); p + 1];
        let mut right = vec![T::zero(); p + 1];
        n[0] = T::one();
        for d in 1..=p {
            left[d] = x - t(j + 1 - d);
            right[d] = t(j + d) - x;
            let mut saved = T::zero();
            for r in 0..d {
                let denom = right[r + 1] + left[d - r];
                let tmp = if denom == T::zero() { T::zero() } else { n[r] / denom };
                n[r] = saved + right[r + 1] * tmp;
                saved = left[d - r] * tmp;
            }
            n[d] = saved;
        }
        n
    }

    /// All `num_basis()` basis values at `x` (clamped to the range).
    pub fn basis<T: Scalar>(&self, x: T) -> Vec<T> {
        let mut out = vec![T::zero(); self.num_basis()];
        let (xc, _) = self.clamp(x);
        let j = self.span(xc.as_f64());
        for (r, v) in self.local(j, xc, self.degree).into_iter().enumerate() {
            out[j - self.degree + r] = v;
        }
        out
    }

    /// Basis values and their derivatives with respect to `x`. Derivatives
    /// vanish outside the range, where the input is clamped.
    pub fn basis_with_grad<T: Scalar>(&self, x: T) -> (Vec<T>, Vec<T>) {
        let nb = self.num_basis();
        let mut val = vec![T::zero(); nb];
        let mut der = vec![T::zero(); nb];
        let (xc, clamped) = self.clamp(x);
        let j = self.span(xc.as_f64());
        let k = self.degree;
        for (r, v) in self.local(j, xc, k).into_iter().enumerate() {
            val[j - k + r] = v;
        }
        if clamped || k == 0 {
            return (val, der);
        }
        // dB_{i,k} = k/(t_{i+k}-t_i)·B_{i,k-1} − k/(t_{i+k+1}-t_{i+1})·B_{i+1,k-1}
        let lower = self.local(j, xc, k - 1);
        let kt = T::from_usize_lossy(k);
        let t = |i: usize| T::lit(self.knots[i]);
        let lower_at = |i: usize| -> T {
            // lower holds B_{j-k+1..=j, k-1}
            if i + k < j + 1 || i > j {
                T::zero()
            } else {
                lower[i + k - 1 - j]
            }
        };
        for i in j - k..=j {
            let mut d = T::zero();
            let d1 = t(i + k) - t(i);
            if d1 != T::zero() {
                d += kt / d1 * lower_at(i);
            }
            let d2 = t(i + k + 1) - t(i + 1);
            if d2 != T::zero() {
                d -= kt / d2 * lower_at(i + 1);
            }
            der[i] = d;
        }
        (val, der)
    }

    /// `Σ_g coeffs[g]·B_g(x)`.
    pub fn eval<T: Scalar>(&self, coeffs: &[T], x: T) -> T {
        self.basis(x).iter().zip(coeffs).map(|(&b, &c)| b * c).sum()
    }
}
