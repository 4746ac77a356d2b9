//! Spectral-norm estimation by power iteration on `A*A`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::dot;

/// Multiplier turning a converged estimate into a conservative bound.
pub const SAFETY_FACTOR: f64 = 1.01;

/// Seed of the pseudo-random start vector used by [`operator_norm_estimate`].
pub const DEFAULT_START_SEED: u64 = 0x5_eed0_fa11;

/// Result of [`operator_norm_estimate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormEstimate {
    /// Converged Rayleigh estimate of `‖A‖₂` (a lower bound up to round-off).
    pub value: f64,
    pub iterations: usize,
}

impl NormEstimate {
    /// `value · SAFETY_FACTOR`, the figure step sizes are derived from.
    pub fn bound(&self) -> f64 {
        self.value * SAFETY_FACTOR
    }
}

/// Estimates `‖A‖₂` for an operator on `dim`-vectors given `A` and `A*`.
///
/// Runs power iteration on `A*A` from a fixed pseudo-random start until the
/// relative change of `√⟨v, A*A v⟩` drops below `tol`. A negative Rayleigh
/// quotient means `apply_adjoint` is not the adjoint of `apply` and is
/// reported as non-convergence, as is hitting `max_iters`.
pub fn operator_norm_estimate<F, G>(
    apply: F,
    apply_adjoint: G,
    dim: usize,
    tol: f64,
    max_iters: usize,
) -> Result<NormEstimate>
where
    F: Fn(&[f64]) -> Vec<f64>,
    G: Fn(&[f64]) -> Vec<f64>,
{
    operator_norm_estimate_seeded(apply, apply_adjoint, dim, tol, max_iters, DEFAULT_START_SEED)
}

/// [`operator_norm_estimate`] from the start vector drawn with `seed`.
pub fn operator_norm_estimate_seeded<F, G>(
    apply: F,
    apply_adjoint: G,
    dim: usize,
    tol: f64,
    max_iters: usize,
    seed: u64,
) -> Result<NormEstimate>
where
    F: Fn(&[f64]) -> Vec<f64>,
    G: Fn(&[f64]) -> Vec<f64>,
{
    if !(tol > 0.0) {
        return Err(Error::param("tol", tol, "must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    normalize(&mut v);
    let mut previous = 0.0;
    let mut last_change = f64::INFINITY;
    for iteration in 1..=max_iters {
        let mut z = apply_adjoint(&apply(&v));
        let rayleigh = dot(&v, &z);
        if !(rayleigh >= 0.0) || !rayleigh.is_finite() {
            return Err(Error::NormNotConverged {
                iterations: iteration,
                last_change,
            });
        }
        let estimate = rayleigh.sqrt();
        if estimate == 0.0 {
            return Ok(NormEstimate {
                value: 0.0,
                iterations: iteration,
            });
        }
        last_change = (estimate - previous).abs() / estimate;
        if last_change < tol {
            return Ok(NormEstimate {
                value: estimate,
                iterations: iteration,
            });
        }
        previous = estimate;
        normalize(&mut z);
        v = z;
    }
    Err(Error::NormNotConverged {
        iterations: max_iters,
        last_change,
    })
}

fn normalize(v: &mut [f64]) {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}
