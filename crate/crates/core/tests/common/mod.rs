//! Independent oracles shared by the integration tests and the acceptance
//! run. Nothing here calls into the solver or the proximal operators.

#![allow(dead_code)]

use nalgebra::DMatrix;
use pet_tgv::blur::{BlurKernel, Padding};
use pet_tgv::diff::{image_gradient, sym_derivative};
use pet_tgv::grid::{ImageGrid, TensorField};

/// Golden-section minimization on `(lo, hi)` driven by a comparator that
/// returns the sign of `f(a) − f(b)`. Comparing differences instead of
/// values keeps the search accurate to round-off rather than `√ε`.
pub fn golden_section(mut lo: f64, mut hi: f64, less: impl Fn(f64, f64) -> bool) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - g * (hi - lo);
    let mut b = lo + g * (hi - lo);
    for _ in 0..400 {
        if hi - lo <= 1e-13 * (1.0 + lo.abs().max(hi.abs())) {
            break;
        }
        if less(a, b) {
            hi = b;
            b = a;
            a = hi - g * (hi - lo);
        } else {
            lo = a;
            a = b;
            b = lo + g * (hi - lo);
        }
    }
    0.5 * (lo + hi)
}

/// `argmin_y σF*(y) + ½(y − x)²` for `F(v) = λ(v − z log v)`, `z > 0`.
///
/// Up to a constant `F*(y) = −λz log(λ − y)` on `y < λ`, so
/// `σF*(a) − σF*(b) = σλz log1p((a − b)/(λ − a))`.
pub fn moreau_oracle(x: f64, sigma: f64, lambda: f64, z: f64) -> f64 {
    let c = sigma * lambda * z;
    let diff = |a: f64, b: f64| c * ((a - b) / (lambda - a)).ln_1p() + 0.5 * (a - b) * (a + b - 2.0 * x);
    let lo = lambda - ((x - lambda).abs() + c.sqrt() + 1.0);
    golden_section(lo, lambda, |a, b| diff(a, b) < 0.0)
}

/// Nearest point of a set given by `param ↦ point` over a box of
/// parameters: a grid search with `steps` cells per axis, repeated on a
/// window of four cells around the incumbent.
pub fn nearest_by_search(
    steps: usize,
    target: &[f64],
    lo: &[f64],
    hi: &[f64],
    point: impl Fn(&[f64]) -> Option<Vec<f64>>,
) -> Vec<f64> {
    let dim = lo.len();
    let mut lo = lo.to_vec();
    let mut hi = hi.to_vec();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for _ in 0..12 {
        let total = (steps + 1).pow(dim as u32);
        for idx in 0..total {
            let mut k = idx;
            let params: Vec<f64> = (0..dim)
                .map(|d| {
                    let i = k % (steps + 1);
                    k /= steps + 1;
                    lo[d] + (hi[d] - lo[d]) * i as f64 / steps as f64
                })
                .collect();
            if let Some(p) = point(&params) {
                let dist: f64 = p.iter().zip(target).map(|(a, b)| (a - b).powi(2)).sum();
                if best.as_ref().is_none_or(|(d, _)| dist < *d) {
                    best = Some((dist, params));
                }
            }
        }
        let (_, centre) = best.clone().expect("search box contains feasible points");
        for d in 0..dim {
            let half = 2.0 * (hi[d] - lo[d]) / steps as f64;
            lo[d] = centre[d] - half;
            hi[d] = centre[d] + half;
        }
    }
    point(&best.unwrap().1).unwrap()
}

/// A 2×2 field whose first pixel holds `p` and the rest zero.
pub fn single_pixel(p: &[f64]) -> TensorField {
    let mut values = vec![0.0; 4 * p.len()];
    for (c, &v) in p.iter().enumerate() {
        values[4 * c] = v;
    }
    TensorField::from_vec(2, 2, p.len(), values).unwrap()
}

/// Isotropic TV with forward differences and a zero difference past the
/// last row or column, optionally smoothed as `Σ √(|∇u|² + μ²)`.
pub fn tv(u: &[f64], w: usize, h: usize, mu: f64) -> f64 {
    let mut total = 0.0;
    for i in 0..h {
        for j in 0..w {
            let c = u[i * w + j];
            let dx = if j + 1 < w { u[i * w + j + 1] - c } else { 0.0 };
            let dy = if i + 1 < h { u[(i + 1) * w + j] - c } else { 0.0 };
            total += (dx * dx + dy * dy + mu * mu).sqrt();
        }
    }
    total
}

pub fn tv_smoothed_gradient(u: &[f64], w: usize, h: usize, mu: f64) -> Vec<f64> {
    let mut g = vec![0.0; u.len()];
    for i in 0..h {
        for j in 0..w {
            let k = i * w + j;
            let dx = if j + 1 < w { u[k + 1] - u[k] } else { 0.0 };
            let dy = if i + 1 < h { u[k + w] - u[k] } else { 0.0 };
            let norm = (dx * dx + dy * dy + mu * mu).sqrt();
            let (gx, gy) = (dx / norm, dy / norm);
            if j + 1 < w {
                g[k + 1] += gx;
                g[k] -= gx;
            }
            if i + 1 < h {
                g[k + w] += gy;
                g[k] -= gy;
            }
        }
    }
    g
}

/// `λ KL(z, u) + TV(u)`: the restoration objective with an identity blur,
/// shifted by a constant so it is nonnegative.
pub fn denoising_objective(u: &[f64], z: &[f64], w: usize, h: usize, lambda: f64) -> f64 {
    let kl: f64 = u.iter().zip(z).map(|(&ui, &zi)| zi * (zi / ui).ln() - zi + ui).sum();
    lambda * kl + tv(u, w, h, 0.0)
}

/// Projection onto `{u ⪰ floor, Σu = total}` by bisection on the shift.
pub fn project_floor_simplex(x: &[f64], floor: f64, total: f64) -> Vec<f64> {
    let sum_at = |t: f64| x.iter().map(|&v| (v - t).max(floor)).sum::<f64>();
    let (mut lo, mut hi) = (x.iter().cloned().fold(f64::INFINITY, f64::min) - total, x.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if sum_at(mid) > total {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t = 0.5 * (lo + hi);
    x.iter().map(|&v| (v - t).max(floor)).collect()
}

/// Accelerated projected gradient on the smoothed objective over
/// `{u ⪰ floor, Σu = Σz}`. Below `floor` the log term is continued by its
/// second-order Taylor polynomial, which keeps the gradient Lipschitz and
/// does not change the problem as long as the minimizer stays above `floor`.
pub fn oracle_tv_denoise(z: &[f64], w: usize, h: usize, lambda: f64, iters: usize) -> Vec<f64> {
    let (mu, floor) = (1e-4, 0.5);
    let total: f64 = z.iter().sum();
    let zmax = z.iter().cloned().fold(0.0, f64::max);
    let step = 1.0 / (lambda * zmax / (floor * floor) + 8.0 / mu);
    let grad = |u: &[f64]| -> Vec<f64> {
        let mut g = tv_smoothed_gradient(u, w, h, mu);
        for ((gi, &ui), &zi) in g.iter_mut().zip(u).zip(z) {
            let dlog = if ui >= floor {
                zi / ui
            } else {
                zi / floor - zi / (floor * floor) * (ui - floor)
            };
            *gi += lambda * (1.0 - dlog);
        }
        g
    };
    let smooth_obj = |u: &[f64]| {
        let kl: f64 = u.iter().zip(z).map(|(&ui, &zi)| ui - zi * ui.ln()).sum();
        lambda * kl + tv(u, w, h, mu)
    };
    let mut x = project_floor_simplex(z, floor, total);
    let mut y = x.clone();
    let mut t: f64 = 1.0;
    let mut f_prev = smooth_obj(&x);
    for _ in 0..iters {
        let g = grad(&y);
        let stepped: Vec<f64> = y.iter().zip(&g).map(|(a, b)| a - step * b).collect();
        let next = project_floor_simplex(&stepped, floor, total);
        let f_next = smooth_obj(&next);
        if f_next > f_prev {
            // Adaptive restart: drop the momentum.
            t = 1.0;
            y = x.clone();
            continue;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let beta = (t - 1.0) / t_next;
        y = next.iter().zip(&x).map(|(n, o)| n + beta * (n - o)).collect();
        x = next;
        t = t_next;
        f_prev = f_next;
    }
    assert!(x.iter().all(|&v| v > floor), "oracle floor is active");
    x
}

/// The stacked restoration operator built from the public pieces: `u ↦ (Ku,
/// ∇u)` for TV, `(u, w) ↦ (Ku, ∇u − w, ε(w))` for TGV.
pub fn stacked_forward(kernel: &BlurKernel, w: usize, h: usize, tgv: bool, x: &[f64]) -> Vec<f64> {
    let n = w * h;
    let op = kernel.operator(w, h, Padding::Replicate).unwrap();
    let u = ImageGrid::from_vec(w, h, x[..n].to_vec()).unwrap();
    let mut out = op.apply(&u).unwrap().into_vec();
    let mut g = image_gradient(&u).into_vec();
    if tgv {
        let v = &x[n..];
        g.iter_mut().zip(v).for_each(|(gi, vi)| *gi -= vi);
        out.extend(g);
        let vf = TensorField::from_vec(w, h, 2, v.to_vec()).unwrap();
        out.extend(sym_derivative(&vf).unwrap().into_vec());
    } else {
        out.extend(g);
    }
    out
}

pub fn dense(kernel: &BlurKernel, w: usize, h: usize, tgv: bool) -> DMatrix<f64> {
    let cols = if tgv { 3 * w * h } else { w * h };
    let mut e = vec![0.0; cols];
    let columns: Vec<Vec<f64>> = (0..cols)
        .map(|j| {
            e[j] = 1.0;
            let c = stacked_forward(kernel, w, h, tgv, &e);
            e[j] = 0.0;
            c
        })
        .collect();
    let rows = columns[0].len();
    DMatrix::from_fn(rows, cols, |i, j| columns[j][i])
}

