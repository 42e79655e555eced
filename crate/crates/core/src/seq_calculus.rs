//! Difference operators on sequences of states, the BDF2 G-norm, and the
//! closed-form solution of the nodal constraint recursion.
//!
//! Elements are flat `f64` slices. Nothing here knows about meshes; inner
//! products are supplied by the caller where one is needed, so the same
//! operators serve scalar sequences and full nodal fields.

use crate::error::{Error, Result};

/// Entries of the symmetric positive definite matrix `G` that makes BDF2
/// energy dissipative.
pub const G11: f64 = 5.0 / 4.0;
pub const G12: f64 = -1.0 / 2.0;
pub const G22: f64 = 1.0 / 4.0;

/// Sharpened norm-equivalence constants between the BDF2 seminorm
/// `|(u)|_{τ,1}` and the backward-difference seminorm `|(u)|_{τ,2}`:
/// `|·|²_{τ,1} ≤ 5 |·|²_{τ,2}` and `|·|²_{τ,2} ≤ 9/7 |·|²_{τ,1}`.
pub const NORM_EQUIV_1_OVER_2: f64 = 5.0;
pub const NORM_EQUIV_2_OVER_1: f64 = 9.0 / 7.0;

/// Constant of the inverse estimate
/// `τ² Σ τ‖d_t² uⁿ‖² ≤ 128/7 (τ Σ ‖u̇ⁿ‖² + τ‖d_t u¹‖²)`.
pub const INVERSE_ESTIMATE: f64 = 128.0 / 7.0;

/// A strictly positive time-step size.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct StepSize(f64);

impl StepSize {
    pub fn new(tau: f64) -> Result<Self> {
        if tau.is_finite() && tau > 0.0 {
            Ok(StepSize(tau))
        } else {
            Err(Error::InvalidArgument(format!(
                "step size must be positive and finite, got {tau}"
            )))
        }
    }

    /// `2^-m`, the step sizes used by convergence sweeps.
    pub fn pow2(m: i32) -> Self {
        StepSize(2f64.powi(-m))
    }

    #[inline]
    pub fn get(self) -> f64 {
        self.0
    }
}

/// Eigenvalues `(3 ∓ 2√2)/4` of `G`, smallest first.
pub fn g_eigenvalues() -> (f64, f64) {
    let s = 2.0 * 2f64.sqrt();
    ((3.0 - s) / 4.0, (3.0 + s) / 4.0)
}

fn combine(terms: &[(f64, &[f64])], scale: f64) -> Vec<f64> {
    let n = terms[0].1.len();
    debug_assert!(terms.iter().all(|(_, v)| v.len() == n));
    (0..n)
        .map(|i| terms.iter().map(|(c, v)| c * v[i]).sum::<f64>() * scale)
        .collect()
}

/// `d_t uⁿ = (uⁿ − uⁿ⁻¹)/τ`.
pub fn backward_difference(u_n: &[f64], u_prev: &[f64], tau: StepSize) -> Vec<f64> {
    combine(&[(1.0, u_n), (-1.0, u_prev)], 1.0 / tau.0)
}

/// `d_t² uⁿ = (uⁿ − 2uⁿ⁻¹ + uⁿ⁻²)/τ²`.
pub fn second_difference(u_n: &[f64], u_prev: &[f64], u_prev2: &[f64], tau: StepSize) -> Vec<f64> {
    combine(
        &[(1.0, u_n), (-2.0, u_prev), (1.0, u_prev2)],
        1.0 / (tau.0 * tau.0),
    )
}

/// BDF2 derivative `u̇ⁿ = (3uⁿ − 4uⁿ⁻¹ + uⁿ⁻²)/(2τ)`.
pub fn bdf2_derivative(u_n: &[f64], u_prev: &[f64], u_prev2: &[f64], tau: StepSize) -> Vec<f64> {
    combine(
        &[(3.0, u_n), (-4.0, u_prev), (1.0, u_prev2)],
        0.5 / tau.0,
    )
}

/// Linear extrapolation `ûⁿ = 2uⁿ⁻¹ − uⁿ⁻²`.
pub fn extrapolate(u_prev: &[f64], u_prev2: &[f64]) -> Vec<f64> {
    combine(&[(2.0, u_prev), (-1.0, u_prev2)], 1.0)
}

/// Euclidean inner product, the default for scalar and ℝ³ sequences.
pub fn euclidean(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// `|(x, y)|²_G = g11 (x,x) + 2 g12 (x,y) + g22 (y,y)` in the inner product `ip`.
pub fn g_norm_sq_with<F>(x: &[f64], y: &[f64], ip: F) -> f64
where
    F: Fn(&[f64], &[f64]) -> f64,
{
    G11 * ip(x, x) + 2.0 * G12 * ip(x, y) + G22 * ip(y, y)
}

/// G-norm with the Euclidean inner product.
pub fn g_norm_sq(x: &[f64], y: &[f64]) -> f64 {
    g_norm_sq_with(x, y, euclidean)
}

/// Taylor coefficients of `1/(3/2 − 2z + z²/2)`: `γₙ = 1 − 3^-(n+1)`.
pub fn gamma(n: u32) -> f64 {
    1.0 - 3f64.powi(-(n as i32) - 1)
}

/// Closed-form value of `|uⁿ|²` (pointwise) for a sequence whose BDF2
/// derivative is orthogonal to the extrapolation at every step:
///
/// `|uⁿ|² = −½(1 − 3^-(n−1))|u⁰|² + 3/2 (1 − 3^-n)|u¹|²
///          + 3/2 τ⁴ Σᵢ₌₂ⁿ (1 − 3^-(n+1−i)) |d_t² uⁱ|²`.
///
/// `d2sq[k]` holds `|d_t² u^{k+2}|²`, so it must have length `n − 1`.
pub fn constraint_recursion_closed_form(
    sq0: &[f64],
    sq1: &[f64],
    d2sq: &[Vec<f64>],
    n: usize,
    tau: StepSize,
) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "closed form is defined for n >= 2, got {n}"
        )));
    }
    if d2sq.len() != n - 1 {
        return Err(Error::DimensionMismatch {
            what: "second-difference history",
            expected: n - 1,
            found: d2sq.len(),
        });
    }
    let c0 = -0.5 * (1.0 - 3f64.powi(-(n as i32 - 1)));
    let c1 = 1.5 * (1.0 - 3f64.powi(-(n as i32)));
    let tau4 = tau.0.powi(4);
    let mut out: Vec<f64> = sq0.iter().zip(sq1).map(|(a, b)| c0 * a + c1 * b).collect();
    for (k, d) in d2sq.iter().enumerate() {
        let i = k + 2;
        let w = 1.5 * tau4 * (1.0 - 3f64.powi(-((n + 1 - i) as i32)));
        for (o, v) in out.iter_mut().zip(d) {
            *o += w * v;
        }
    }
    Ok(out)
}
