//! Finite-difference operators on the pixel grid.
//!
//! `∇ᵢ` is the forward difference along `eᵢ` with a Neumann boundary: the
//! last sample along each axis gets difference zero. The divergence is the
//! exact negative adjoint, `div = −∇*`, realized with backward differences
//! and matching boundary terms. The symmetrized derivative `ε(w)` averages
//! the two cross derivatives of a vector field `w`, and [`sym_derivative_adjoint`]
//! is its exact adjoint `ε*`.
//!
//! Every operator exists in two forms: a typed one on [`ImageGrid`]/[`TensorField`]
//! and a slice kernel writing into a caller buffer, which the solver uses
//! to avoid allocating inside its iteration.

use crate::error::Result;
use crate::grid::{check_arity_exact, ImageGrid, TensorField};

/// Gradient of an arity-`k` field (`k ∈ {1, 2}`), giving arity `2k` laid out
/// as `(∇₁x₁ … ∇₁x_k, ∇₂x₁ … ∇₂x_k)`.
pub fn gradient(x: &TensorField) -> Result<TensorField> {
    let k = x.arity();
    if k != 1 && k != 2 {
        check_arity_exact(k, 2)?;
    }
    let (w, h) = x.dims();
    let n = w * h;
    let mut out = vec![0.0; 2 * k * n];
    for c in 0..k {
        let src = x.component(c);
        forward_x(src, &mut out[c * n..(c + 1) * n], w, h);
        forward_y(src, &mut out[(k + c) * n..(k + c + 1) * n], w, h);
    }
    Ok(TensorField::from_raw(w, h, 2 * k, out))
}

/// Image gradient; shorthand for `gradient(&x.to_field())`.
pub fn image_gradient(x: &ImageGrid) -> TensorField {
    let (w, h) = x.dims();
    let mut out = vec![0.0; 2 * w * h];
    grad_into(x.values(), &mut out, w, h);
    TensorField::from_raw(w, h, 2, out)
}

/// `div y = −∇* y` for an arity-`2k` field, returning arity `k`.
pub fn divergence(y: &TensorField) -> Result<TensorField> {
    let k2 = y.arity();
    if k2 != 2 && k2 != 4 {
        check_arity_exact(k2, 2)?;
    }
    let k = k2 / 2;
    let (w, h) = y.dims();
    let n = w * h;
    let mut out = vec![0.0; k * n];
    for c in 0..k {
        let dst = &mut out[c * n..(c + 1) * n];
        div_x_acc(y.component(c), dst, w, h);
        div_y_acc(y.component(k + c), dst, w, h);
    }
    Ok(TensorField::from_raw(w, h, k, out))
}

/// `ε(w)` with components `(∂₁w₁, ½(∂₂w₁+∂₁w₂), ½(∂₁w₂+∂₂w₁), ∂₂w₂)`.
pub fn sym_derivative(w: &TensorField) -> Result<TensorField> {
    check_arity_exact(w.arity(), 2)?;
    let (width, height) = w.dims();
    let mut out = vec![0.0; 4 * width * height];
    let mut scratch = vec![0.0; width * height];
    sym_into(w.values(), &mut out, &mut scratch, width, height);
    Ok(TensorField::from_raw(width, height, 4, out))
}

/// `ε*(r)`, the exact adjoint of [`sym_derivative`]: `⟨ε(w), r⟩ = ⟨w, ε*(r)⟩`.
/// The "div r" of the primal `w` step is `−ε*(r)`.
pub fn sym_derivative_adjoint(r: &TensorField) -> Result<TensorField> {
    check_arity_exact(r.arity(), 4)?;
    let (width, height) = r.dims();
    let mut out = vec![0.0; 2 * width * height];
    let mut scratch = vec![0.0; width * height];
    sym_adjoint_into(r.values(), &mut out, &mut scratch, width, height);
    Ok(TensorField::from_raw(width, height, 2, out))
}

// Slice kernels. `n = w * h`; planar component layout throughout.

pub(crate) fn forward_x(src: &[f64], dst: &mut [f64], w: usize, h: usize) {
    for row in 0..h {
        let s = &src[row * w..(row + 1) * w];
        let d = &mut dst[row * w..(row + 1) * w];
        for col in 0..w - 1 {
            d[col] = s[col + 1] - s[col];
        }
        d[w - 1] = 0.0;
    }
}

pub(crate) fn forward_y(src: &[f64], dst: &mut [f64], w: usize, h: usize) {
    for row in 0..h - 1 {
        for col in 0..w {
            dst[row * w + col] = src[(row + 1) * w + col] - src[row * w + col];
        }
    }
    dst[(h - 1) * w..h * w].fill(0.0);
}

/// `dst += −∇₁* y`.
pub(crate) fn div_x_acc(y: &[f64], dst: &mut [f64], w: usize, h: usize) {
    for row in 0..h {
        let s = &y[row * w..(row + 1) * w];
        let d = &mut dst[row * w..(row + 1) * w];
        d[0] += s[0];
        for col in 1..w - 1 {
            d[col] += s[col] - s[col - 1];
        }
        d[w - 1] -= s[w - 2];
    }
}

/// `dst += −∇₂* y`.
pub(crate) fn div_y_acc(y: &[f64], dst: &mut [f64], w: usize, h: usize) {
    for col in 0..w {
        dst[col] += y[col];
    }
    for row in 1..h - 1 {
        for col in 0..w {
            let i = row * w + col;
            dst[i] += y[i] - y[i - w];
        }
    }
    let last = (h - 1) * w;
    for col in 0..w {
        dst[last + col] -= y[last - w + col];
    }
}

/// Image gradient into a 2-component buffer.
pub(crate) fn grad_into(u: &[f64], out: &mut [f64], w: usize, h: usize) {
    let n = w * h;
    let (gx, gy) = out.split_at_mut(n);
    forward_x(u, gx, w, h);
    forward_y(u, gy, w, h);
}

/// `out = div q` for a 2-component `q`.
pub(crate) fn div_into(q: &[f64], out: &mut [f64], w: usize, h: usize) {
    let n = w * h;
    out.fill(0.0);
    div_x_acc(&q[..n], out, w, h);
    div_y_acc(&q[n..2 * n], out, w, h);
}

/// `out = ε(w)`; `scratch` holds one plane.
pub(crate) fn sym_into(wf: &[f64], out: &mut [f64], scratch: &mut [f64], w: usize, h: usize) {
    let n = w * h;
    let (w1, w2) = wf.split_at(n);
    let (e11, rest) = out.split_at_mut(n);
    let (e12, rest) = rest.split_at_mut(n);
    let (e21, e22) = rest.split_at_mut(n);
    forward_x(w1, e11, w, h);
    forward_y(w2, e22, w, h);
    forward_y(w1, e12, w, h);
    forward_x(w2, scratch, w, h);
    for ((a, b), s) in e12.iter_mut().zip(e21.iter_mut()).zip(scratch.iter()) {
        let m = 0.5 * (*a + s);
        *a = m;
        *b = m;
    }
}

/// `out = ε*(r)`; `scratch` holds one plane.
pub(crate) fn sym_adjoint_into(r: &[f64], out: &mut [f64], scratch: &mut [f64], w: usize, h: usize) {
    let n = w * h;
    let (r11, rest) = r.split_at(n);
    let (r12, rest) = rest.split_at(n);
    let (r21, r22) = rest.split_at(n);
    for ((s, a), b) in scratch.iter_mut().zip(r12).zip(r21) {
        *s = 0.5 * (a + b);
    }
    let (o1, o2) = out.split_at_mut(n);
    o1.fill(0.0);
    o2.fill(0.0);
    // ε* = ∇* ∘ S = −div ∘ S; accumulate div then negate.
    div_x_acc(r11, o1, w, h);
    div_y_acc(scratch, o1, w, h);
    div_x_acc(scratch, o2, w, h);
    div_y_acc(r22, o2, w, h);
    out.iter_mut().for_each(|v| *v = -*v);
}
