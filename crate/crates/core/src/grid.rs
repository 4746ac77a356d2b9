//! Image and tensor-field containers plus the mixed `L_{p,q}` norms.
//!
//! Pixels are stored row-major: index `row * width + col`. Direction `e₁` is
//! horizontal (along a row, i.e. the column index) and `e₂` is vertical.
//! A [`TensorField`] stores its components in planar layout, component `c`
//! occupying `values[c * N .. (c + 1) * N]`.

use crate::error::{Error, Result};

/// Smallest admissible extent along either axis.
pub const MIN_EXTENT: usize = 2;

/// A real scalar field over an `width × height` pixel grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl ImageGrid {
    /// Builds a grid from row-major values, validating shape and finiteness.
    pub fn from_vec(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        check_extent(width, height)?;
        if values.len() != width * height {
            return Err(Error::ShapeMismatch {
                expected: width * height,
                found: values.len(),
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Result<Self> {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        check_extent(width, height)?;
        if !value.is_finite() {
            return Err(Error::NonFinite { index: 0 });
        }
        Ok(Self {
            width,
            height,
            values: vec![value; width * height],
        })
    }

    /// Evaluates `f(row, col)` at every pixel.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(width * height);
        for row in 0..height {
            for col in 0..width {
                values.push(f(row, col));
            }
        }
        Self::from_vec(width, height, values)
    }

    /// Wraps values produced by internal operators whose finiteness is
    /// guaranteed by construction or checked by the caller.
    pub(crate) fn from_raw(width: usize, height: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), width * height);
        Self {
            width,
            height,
            values,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Number of pixels `N`.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Euclidean norm of the pixel vector.
    pub fn norm2(&self) -> f64 {
        dot(&self.values, &self.values).sqrt()
    }

    pub fn dot(&self, other: &ImageGrid) -> Result<f64> {
        self.check_same_dims(other)?;
        Ok(dot(&self.values, &other.values))
    }

    pub fn add(&self, other: &ImageGrid) -> Result<ImageGrid> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &ImageGrid) -> Result<ImageGrid> {
        self.zip_with(other, |a, b| a - b)
    }

    /// Elementwise (Hadamard) product.
    pub fn hadamard(&self, other: &ImageGrid) -> Result<ImageGrid> {
        self.zip_with(other, |a, b| a * b)
    }

    pub fn scale(&self, factor: f64) -> ImageGrid {
        self.map(|v| v * factor)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ImageGrid {
        ImageGrid::from_raw(self.width, self.height, self.values.iter().map(|&v| f(v)).collect())
    }

    /// Applies the guarded logarithm [`guarded_log`] to every pixel.
    pub fn guarded_log(&self) -> ImageGrid {
        self.map(guarded_log)
    }

    pub fn zip_with(&self, other: &ImageGrid, f: impl Fn(f64, f64) -> f64) -> Result<ImageGrid> {
        self.check_same_dims(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(ImageGrid::from_raw(self.width, self.height, values))
    }

    pub fn check_same_dims(&self, other: &ImageGrid) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch {
                left: self.dims(),
                right: other.dims(),
            });
        }
        Ok(())
    }

    /// Views the image as a one-component tensor field.
    pub fn to_field(&self) -> TensorField {
        TensorField::from_raw(self.width, self.height, 1, self.values.clone())
    }
}

/// A per-pixel `k`-vector field, `k ∈ {1, 2, 4}`, stored in planar layout.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorField {
    width: usize,
    height: usize,
    arity: usize,
    values: Vec<f64>,
}

impl TensorField {
    pub fn from_vec(width: usize, height: usize, arity: usize, values: Vec<f64>) -> Result<Self> {
        check_extent(width, height)?;
        check_arity(arity)?;
        if values.len() != width * height * arity {
            return Err(Error::ShapeMismatch {
                expected: width * height * arity,
                found: values.len(),
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self {
            width,
            height,
            arity,
            values,
        })
    }

    pub fn zeros(width: usize, height: usize, arity: usize) -> Result<Self> {
        check_extent(width, height)?;
        check_arity(arity)?;
        Ok(Self::from_raw(width, height, arity, vec![0.0; width * height * arity]))
    }

    pub(crate) fn from_raw(width: usize, height: usize, arity: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), width * height * arity);
        Self {
            width,
            height,
            arity,
            values,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Number of pixels `N` (not the number of scalars).
    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    /// The plane holding component `c` for every pixel.
    pub fn component(&self, c: usize) -> &[f64] {
        let n = self.pixels();
        &self.values[c * n..(c + 1) * n]
    }

    /// The `k`-vector at pixel `i`.
    pub fn pixel(&self, i: usize) -> Vec<f64> {
        (0..self.arity).map(|c| self.component(c)[i]).collect()
    }

    pub fn dot(&self, other: &TensorField) -> Result<f64> {
        if self.dims() != other.dims() || self.arity != other.arity {
            return Err(Error::DimensionMismatch {
                left: self.dims(),
                right: other.dims(),
            });
        }
        Ok(dot(&self.values, &other.values))
    }

    pub fn scale(&self, factor: f64) -> TensorField {
        let values = self.values.iter().map(|v| v * factor).collect();
        TensorField::from_raw(self.width, self.height, self.arity, values)
    }

    /// Interprets a one-component field as an image.
    pub fn to_image(&self) -> Result<ImageGrid> {
        check_arity_exact(self.arity, 1)?;
        Ok(ImageGrid::from_raw(self.width, self.height, self.values.clone()))
    }

    /// Euclidean length of the vector at every pixel.
    pub fn pixel_norms(&self) -> Vec<f64> {
        let n = self.pixels();
        let mut out = vec![0.0; n];
        for c in 0..self.arity {
            for (acc, v) in out.iter_mut().zip(self.component(c)) {
                *acc += v * v;
            }
        }
        out.iter_mut().for_each(|v| *v = v.sqrt());
        out
    }
}

/// Exponent of an `L_{p,q}` norm: finite `≥ 1`, or `∞`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Exponent {
    Finite(f64),
    Infinity,
}

impl Exponent {
    fn validate(self) -> Result<Self> {
        match self {
            Exponent::Finite(p) if !(p >= 1.0) || !p.is_finite() => Err(Error::InvalidExponent(p)),
            e => Ok(e),
        }
    }
}

impl From<f64> for Exponent {
    fn from(p: f64) -> Self {
        if p == f64::INFINITY {
            Exponent::Infinity
        } else {
            Exponent::Finite(p)
        }
    }
}

/// `‖x‖_{p,q} = (Σᵢ ‖xᵢ‖_p^q)^{1/q}`, with `q = ∞` taking the max over pixels.
pub fn lpq_norm(x: &TensorField, p: impl Into<Exponent>, q: impl Into<Exponent>) -> Result<f64> {
    let p = p.into().validate()?;
    let q = q.into().validate()?;
    let n = x.pixels();
    let pixel_norm = |i: usize| -> f64 {
        let comps = (0..x.arity()).map(|c| x.component(c)[i].abs());
        match p {
            Exponent::Infinity => comps.fold(0.0, f64::max),
            Exponent::Finite(1.0) => comps.sum(),
            Exponent::Finite(2.0) => comps.map(|v| v * v).sum::<f64>().sqrt(),
            Exponent::Finite(p) => comps.map(|v| v.powf(p)).sum::<f64>().powf(1.0 / p),
        }
    };
    let norms = (0..n).map(pixel_norm);
    Ok(match q {
        Exponent::Infinity => norms.fold(0.0, f64::max),
        Exponent::Finite(1.0) => norms.sum(),
        Exponent::Finite(q) => norms.map(|v| v.powf(q)).sum::<f64>().powf(1.0 / q),
    })
}

/// `log t` for `t > 0`, and `0` otherwise.
pub fn guarded_log(t: f64) -> f64 {
    if t > 0.0 {
        t.ln()
    } else {
        0.0
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_extent(width: usize, height: usize) -> Result<()> {
    if width < MIN_EXTENT || height < MIN_EXTENT {
        return Err(Error::GridTooSmall { width, height });
    }
    Ok(())
}

fn check_arity(arity: usize) -> Result<()> {
    if matches!(arity, 1 | 2 | 4) {
        Ok(())
    } else {
        Err(Error::InvalidArity { expected: "1, 2 or 4", found: arity })
    }
}

pub(crate) fn check_arity_exact(found: usize, expected: usize) -> Result<()> {
    if found == expected {
        return Ok(());
    }
    let expected = match expected {
        1 => "1",
        2 => "2",
        _ => "4",
    };
    Err(Error::InvalidArity { expected, found })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn field(arity: usize, pixels: &[&[f64]]) -> TensorField {
        // Two-pixel fields are laid out on a 2x1 grid padded to the 2x2 minimum.
        let n = 4;
        let mut values = vec![0.0; n * arity];
        for (i, v) in pixels.iter().enumerate() {
            for c in 0..arity {
                values[c * n + i] = v[c];
            }
        }
        TensorField::from_vec(2, 2, arity, values).unwrap()
    }

    #[test]
    fn zero_field_has_zero_norm() {
        let z = TensorField::zeros(3, 4, 2).unwrap();
        for (p, q) in [(1.0, 1.0), (2.0, 1.0), (2.0, f64::INFINITY), (3.0, 2.5)] {
            assert_eq!(lpq_norm(&z, p, q).unwrap(), 0.0);
        }
    }

    #[test]
    fn euclidean_pixel_norm() {
        let x = field(2, &[&[3.0, 4.0]]);
        assert_eq!(lpq_norm(&x, 2.0, 1.0).unwrap(), 5.0);
    }

    #[test]
    fn two_pixel_norms() {
        let x = field(2, &[&[3.0, 4.0], &[0.0, 1.0]]);
        assert_eq!(lpq_norm(&x, 2.0, f64::INFINITY).unwrap(), 5.0);
        assert_eq!(lpq_norm(&x, 2.0, 1.0).unwrap(), 6.0);
    }

    #[test]
    fn rejects_exponents_below_one() {
        let x = field(2, &[&[3.0, 4.0]]);
        assert!(matches!(lpq_norm(&x, 0.5, 1.0), Err(Error::InvalidExponent(_))));
        assert!(matches!(lpq_norm(&x, 2.0, 0.0), Err(Error::InvalidExponent(_))));
        assert!(lpq_norm(&x, f64::INFINITY, f64::INFINITY).is_ok());
    }

    #[test]
    fn guarded_log_values() {
        let e = std::f64::consts::E;
        let out: Vec<f64> = [e, 1.0, 0.0, -2.0].iter().map(|&t| guarded_log(t)).collect();
        assert!((out[0] - 1.0).abs() < 1e-15);
        assert_eq!(&out[1..], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn sum_and_hadamard_identity() {
        let ones = ImageGrid::filled(4, 4, 1.0).unwrap();
        assert_eq!(ones.sum(), 16.0);
        let x = ImageGrid::from_fn(4, 4, |r, c| (r * 7 + c) as f64 - 3.5).unwrap();
        assert_eq!(x.hadamard(&ones).unwrap(), x);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let a = ImageGrid::zeros(3, 4).unwrap();
        let b = ImageGrid::zeros(4, 3).unwrap();
        assert!(matches!(a.add(&b), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn construction_rejects_bad_input() {
        assert!(matches!(ImageGrid::zeros(1, 5), Err(Error::GridTooSmall { .. })));
        assert!(matches!(
            ImageGrid::from_vec(2, 2, vec![0.0, f64::NAN, 0.0, 0.0]),
            Err(Error::NonFinite { index: 1 })
        ));
        assert!(matches!(TensorField::zeros(2, 2, 3), Err(Error::InvalidArity { .. })));
    }

    fn arb_field() -> impl Strategy<Value = TensorField> {
        (2usize..6, 2usize..6, prop_oneof![Just(1usize), Just(2), Just(4)]).prop_flat_map(|(w, h, k)| {
            proptest::collection::vec(-10.0f64..10.0, w * h * k)
                .prop_map(move |v| TensorField::from_vec(w, h, k, v).unwrap())
        })
    }

    proptest! {
        #[test]
        fn l21_dominates_l2inf(x in arb_field()) {
            let l21 = lpq_norm(&x, 2.0, 1.0).unwrap();
            let l2inf = lpq_norm(&x, 2.0, f64::INFINITY).unwrap();
            prop_assert!(l21 >= l2inf);
            let nonzero = x.pixel_norms().iter().filter(|&&v| v > 0.0).count();
            if nonzero <= 1 {
                prop_assert!((l21 - l2inf).abs() <= 1e-12 * l21.max(1.0));
            } else {
                prop_assert!(l21 > l2inf);
            }
        }

        #[test]
        fn norm_is_absolutely_homogeneous(x in arb_field(), a in -5.0f64..5.0) {
            for (p, q) in [(2.0, 1.0), (1.0, 2.0), (2.0, f64::INFINITY)] {
                let lhs = lpq_norm(&x.scale(a), p, q).unwrap();
                let rhs = a.abs() * lpq_norm(&x, p, q).unwrap();
                prop_assert!((lhs - rhs).abs() <= 1e-10 * rhs.max(1.0));
            }
        }

        #[test]
        fn guarded_log_never_nan(t in proptest::num::f64::ANY) {
            prop_assume!(!t.is_nan());
            let once = guarded_log(t);
            prop_assert!(!guarded_log(once).is_nan());
        }
    }
}
