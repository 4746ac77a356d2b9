//! Closed-form proximal operators of the restoration problem.
//!
//! * [`prox_g`]: positivity followed by the photometry (mean) correction.
//! * [`prox_f1_star`]: the conjugate of the Poisson data term `λ Σ(v − z log v)`.
//! * [`project_l2inf_ball`]: projection onto `{‖x‖_{2,∞} ≤ radius}`, which is
//!   the proximal map of the indicator conjugates of the two `L_{2,1}` terms.
//!
//! The slice variants (`*_into`, `*_in_place`) are what the solver calls.

use crate::error::{Error, Result};
use crate::grid::{ImageGrid, TensorField};

/// `max(x̃, 0) − (1/N) Σ(max(x̃, 0) − z)`.
///
/// The max is applied before the uniform shift, so the result sums to `Σz`
/// but may hold small negative values.
pub fn prox_g(x: &ImageGrid, z: &ImageGrid) -> Result<ImageGrid> {
    x.check_same_dims(z)?;
    let mut out = x.values().to_vec();
    prox_g_in_place(&mut out, z.sum());
    Ok(ImageGrid::from_raw(x.width(), x.height(), out))
}

pub(crate) fn prox_g_in_place(x: &mut [f64], z_sum: f64) {
    x.iter_mut().for_each(|v| *v = v.max(0.0));
    let shift = (x.iter().sum::<f64>() - z_sum) / x.len() as f64;
    x.iter_mut().for_each(|v| *v -= shift);
}

/// Euclidean projection onto `{u ⪰ 0, Σu = Σz}`: `max(x̃ − c, 0)` with the
/// threshold `c` found by sorting.
///
/// This is the exact proximal map of `G`; [`prox_g`] is its one-pass
/// approximation.
pub fn project_positive_photometry(x: &ImageGrid, z: &ImageGrid) -> Result<ImageGrid> {
    x.check_same_dims(z)?;
    let mut out = x.values().to_vec();
    let mut scratch = Vec::with_capacity(out.len());
    project_positive_photometry_in_place(&mut out, z.sum(), &mut scratch);
    Ok(ImageGrid::from_raw(x.width(), x.height(), out))
}

pub(crate) fn project_positive_photometry_in_place(x: &mut [f64], total: f64, scratch: &mut Vec<f64>) {
    if total <= 0.0 {
        x.fill(0.0);
        return;
    }
    scratch.clear();
    scratch.extend_from_slice(x);
    scratch.sort_unstable_by(|a, b| b.total_cmp(a));
    // Largest k with s_k − (Σ_{j≤k} s_j − total)/k > 0.
    let mut prefix = 0.0;
    let mut threshold = 0.0;
    for (k, &s) in scratch.iter().enumerate() {
        prefix += s;
        let candidate = (prefix - total) / (k + 1) as f64;
        if s - candidate > 0.0 {
            threshold = candidate;
        } else {
            break;
        }
    }
    x.iter_mut().for_each(|v| *v = (*v - threshold).max(0.0));
}

/// Proximal map of `σ F₁*` for `F₁(v) = λ Σ(v − z log v)`, per component:
/// `½(x̃ + λ − √((x̃ − λ)² + 4σλz))` where `z ≠ 0`, and `λ` where `z = 0`.
pub fn prox_f1_star(x: &ImageGrid, sigma: f64, lambda: f64, z: &ImageGrid) -> Result<ImageGrid> {
    x.check_same_dims(z)?;
    check_positive("sigma", sigma)?;
    check_positive("lambda", lambda)?;
    if let Some((index, &value)) = z.values().iter().enumerate().find(|(_, v)| **v < 0.0) {
        return Err(Error::NegativeValue { index, value });
    }
    let mut out = x.values().to_vec();
    prox_f1_star_in_place(&mut out, sigma, lambda, z.values());
    Ok(ImageGrid::from_raw(x.width(), x.height(), out))
}

pub(crate) fn prox_f1_star_in_place(x: &mut [f64], sigma: f64, lambda: f64, z: &[f64]) {
    let four_sigma_lambda = 4.0 * sigma * lambda;
    for (v, &zi) in x.iter_mut().zip(z) {
        *v = prox_f1_star_scalar(*v, four_sigma_lambda, lambda, zi);
    }
}

#[inline]
fn prox_f1_star_scalar(x: f64, four_sigma_lambda: f64, lambda: f64, z: f64) -> f64 {
    if z == 0.0 {
        return lambda;
    }
    let d = x - lambda;
    let disc = (d * d + four_sigma_lambda * z).max(0.0);
    0.5 * (x + lambda - disc.sqrt())
}

/// Radial projection of every pixel vector onto the Euclidean ball of `radius`.
pub fn project_l2inf_ball(x: &TensorField, radius: f64) -> Result<TensorField> {
    check_positive("radius", radius)?;
    let mut out = x.clone();
    project_l2inf_in_place(out.values_mut(), x.arity(), radius);
    Ok(out)
}

pub(crate) fn project_l2inf_in_place(x: &mut [f64], arity: usize, radius: f64) {
    let n = x.len() / arity;
    let inv_r = 1.0 / radius;
    match arity {
        2 => {
            let (a, b) = x.split_at_mut(n);
            for (p, q) in a.iter_mut().zip(b.iter_mut()) {
                let norm = (*p * *p + *q * *q).sqrt();
                if norm > radius {
                    let s = 1.0 / (norm * inv_r);
                    *p *= s;
                    *q *= s;
                }
            }
        }
        _ => {
            for i in 0..n {
                let norm = (0..arity).map(|c| x[c * n + i] * x[c * n + i]).sum::<f64>().sqrt();
                if norm > radius {
                    let s = 1.0 / (norm * inv_r);
                    for c in 0..arity {
                        x[c * n + i] *= s;
                    }
                }
            }
        }
    }
}

fn check_positive(name: &'static str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::param(name, value, "must be positive"))
    }
}
