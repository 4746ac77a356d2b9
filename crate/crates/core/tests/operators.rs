//! Adjoint identities and operator norms checked against independent
//! computations: random inner products and a dense SVD.

mod common;

use pet_tgv::blur::{gaussian_kernel, BlurKernel, Padding};
use pet_tgv::diff::{divergence, gradient, image_gradient, sym_derivative, sym_derivative_adjoint};
use pet_tgv::grid::{ImageGrid, TensorField};
use pet_tgv::opnorm::operator_norm_estimate;
use pet_tgv::solver::{Mode, Restorer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;

const INSTANCES: usize = 100;
const ADJOINT_TOL: f64 = 1e-10;

fn field(rng: &mut ChaCha8Rng, w: usize, h: usize, arity: usize) -> TensorField {
    let values = (0..w * h * arity).map(|_| rng.gen_range(-1.0..1.0)).collect();
    TensorField::from_vec(w, h, arity, values).unwrap()
}

fn image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> ImageGrid {
    field(rng, w, h, 1).to_image().unwrap()
}

fn dims(rng: &mut ChaCha8Rng) -> (usize, usize) {
    (rng.gen_range(2..40), rng.gen_range(2..40))
}

fn rel_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

#[test]
fn gradient_is_minus_adjoint_of_divergence() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..INSTANCES {
        let (w, h) = dims(&mut rng);
        let arity = rng.gen_range(1..=2);
        let x = field(&mut rng, w, h, arity);
        let y = field(&mut rng, w, h, 2 * arity);
        let lhs = gradient(&x).unwrap().dot(&y).unwrap();
        let rhs = -x.dot(&divergence(&y).unwrap()).unwrap();
        assert!(rel_gap(lhs, rhs) <= ADJOINT_TOL, "{w}x{h} arity {arity}: {lhs} vs {rhs}");
    }
}

#[test]
fn symmetrized_derivative_adjoint() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..INSTANCES {
        let (w, h) = dims(&mut rng);
        let v = field(&mut rng, w, h, 2);
        let r = field(&mut rng, w, h, 4);
        let lhs = sym_derivative(&v).unwrap().dot(&r).unwrap();
        let rhs = v.dot(&sym_derivative_adjoint(&r).unwrap()).unwrap();
        assert!(rel_gap(lhs, rhs) <= ADJOINT_TOL, "{w}x{h}: {lhs} vs {rhs}");
    }
}

#[test]
fn blur_adjoint_for_both_paddings() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for i in 0..INSTANCES {
        let (w, h) = (rng.gen_range(17..48), rng.gen_range(17..48));
        let sigma = rng.gen_range(0.3..2.0);
        let kernel = BlurKernel::gaussian(sigma).unwrap();
        let padding = if i % 2 == 0 { Padding::Replicate } else { Padding::Periodic };
        let op = kernel.operator(w, h, padding).unwrap();
        let x = image(&mut rng, w, h);
        let y = image(&mut rng, w, h);
        let lhs = op.apply(&x).unwrap().dot(&y).unwrap();
        let rhs = x.dot(&op.apply_adjoint(&y).unwrap()).unwrap();
        assert!(rel_gap(lhs, rhs) <= ADJOINT_TOL, "{w}x{h} {padding}: {lhs} vs {rhs}");
    }
}

#[test]
fn gradient_norm_approaches_sqrt_eight() {
    let (w, h) = (64, 64);
    let grad = |x: &[f64]| image_gradient(&ImageGrid::from_vec(w, h, x.to_vec()).unwrap()).into_vec();
    let neg_div = |y: &[f64]| {
        let f = TensorField::from_vec(w, h, 2, y.to_vec()).unwrap();
        divergence(&f).unwrap().scale(-1.0).into_vec()
    };
    let est = operator_norm_estimate(grad, neg_div, w * h, 1e-10, 100_000).unwrap();
    // Largest Neumann eigenvalue is 8 sin²(63π/128).
    let exact = (8.0 * (63.0 * std::f64::consts::PI / 128.0).sin().powi(2)).sqrt();
    assert!((est.value - exact).abs() < 1e-6, "{} vs {exact}", est.value);
    assert!(est.value < 8f64.sqrt() && est.value > 2.82);
}

#[test]
fn dense_singular_value_matches_power_iteration() {
    let (w, h) = (8, 8);
    let kernel = gaussian_kernel(1.0, 3).unwrap();
    let z = ImageGrid::filled(w, h, 1.0).unwrap();
    let restorer = Restorer::new(&z, &kernel, Padding::Replicate).unwrap();
    for (mode, tgv) in [(Mode::Tv, false), (Mode::Tgv, true)] {
        let a = dense(&kernel, w, h, tgv);
        let sigma_max = a.clone().svd(false, false).singular_values.max();
        let at = a.transpose();
        let est = operator_norm_estimate(
            |x| (&a * nalgebra::DVector::from_column_slice(x)).as_slice().to_vec(),
            |y| (&at * nalgebra::DVector::from_column_slice(y)).as_slice().to_vec(),
            a.ncols(),
            1e-15,
            1_000_000,
        )
        .unwrap();
        assert!(rel_gap(est.value, sigma_max) <= 1e-6, "{mode}: {} vs {sigma_max}", est.value);

        // The solver's matrix-free estimate (looser stopping rule) and its bound.
        let solver_norm = restorer.operator_norm(mode).unwrap();
        assert!(rel_gap(solver_norm.value, sigma_max) <= 1e-3, "{mode}: {} vs {sigma_max}", solver_norm.value);
        assert!(solver_norm.bound() >= sigma_max, "{mode}");
    }
}
