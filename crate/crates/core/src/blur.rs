//! Gaussian point-spread functions and FFT convolution with boundary padding.
//!
//! A [`BlurKernel`] is grid independent. Binding it to a grid size and a
//! [`Padding`] mode yields a [`BlurOperator`] that caches FFT plans and the
//! kernel spectrum, and applies `K` and its exact adjoint `K*`.
//!
//! With [`Padding::Replicate`] the image is extended by the kernel radius with
//! its edge values, circularly convolved on a transform grid whose sides
//! factor into 2, 3 and 5, then cropped. The pipeline is linear, so `K*` is
//! its transpose: zero-embed, circular correlation, then fold every padded
//! sample back onto the pixel it was copied from.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::grid::ImageGrid;

/// `2·√(2 ln 2)`, the FWHM of a unit-σ Gaussian.
pub const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_3;

/// Boundary extension applied before the circular convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Padding {
    /// Edge replication by the kernel radius.
    #[default]
    Replicate,
    /// No extension; the image is treated as periodic.
    Periodic,
}

impl std::str::FromStr for Padding {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "replicate" => Ok(Padding::Replicate),
            "periodic" => Ok(Padding::Periodic),
            other => Err(format!("unknown padding `{other}` (expected replicate|periodic)")),
        }
    }
}

impl std::fmt::Display for Padding {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Padding::Replicate => "replicate",
            Padding::Periodic => "periodic",
        })
    }
}

/// Square, odd-sized convolution kernel with taps in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct BlurKernel {
    radius: usize,
    sigma: Option<f64>,
    taps: Vec<f64>,
}

impl BlurKernel {
    /// Normalized isotropic Gaussian with the default support `⌈4σ⌉`.
    pub fn gaussian(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::param("sigma", sigma, "must be positive"));
        }
        gaussian_kernel(sigma, (4.0 * sigma).ceil() as usize)
    }

    /// Gaussian specified by its full width at half maximum in millimetres.
    pub fn gaussian_fwhm(fwhm_mm: f64, pixel_mm: f64) -> Result<Self> {
        Self::gaussian(fwhm_to_sigma(fwhm_mm, pixel_mm)?)
    }

    /// The identity kernel (single unit tap).
    pub fn delta() -> Self {
        Self {
            radius: 0,
            sigma: None,
            taps: vec![1.0],
        }
    }

    /// Arbitrary taps on a `(2r+1)²` support.
    pub fn from_taps(radius: usize, taps: Vec<f64>) -> Result<Self> {
        let side = 2 * radius + 1;
        if taps.len() != side * side {
            return Err(Error::ShapeMismatch {
                expected: side * side,
                found: taps.len(),
            });
        }
        if let Some(index) = taps.iter().position(|t| !t.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self {
            radius,
            sigma: None,
            taps,
        })
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    /// Side length `2r + 1` of the support.
    pub fn side(&self) -> usize {
        2 * self.radius + 1
    }

    /// Standard deviation in pixels, for Gaussian kernels.
    pub fn sigma(&self) -> Option<f64> {
        self.sigma
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    /// Tap at offset `(dy, dx)` from the center.
    pub fn tap(&self, dy: isize, dx: isize) -> f64 {
        let r = self.radius as isize;
        let side = self.side() as isize;
        self.taps[((dy + r) * side + dx + r) as usize]
    }

    /// Binds the kernel to a grid, precomputing transform plans and spectrum.
    pub fn operator(&self, width: usize, height: usize, padding: Padding) -> Result<BlurOperator> {
        BlurOperator::new(self, width, height, padding)
    }
}

/// Normalized Gaussian taps `∝ exp(−(i²+j²)/(2σ²))` for `|i|, |j| ≤ radius`.
pub fn gaussian_kernel(sigma: f64, radius: usize) -> Result<BlurKernel> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::param("sigma", sigma, "must be positive"));
    }
    if (radius as f64) < (3.0 * sigma).ceil() {
        return Err(Error::param("support_radius", radius as f64, "must be at least ceil(3 sigma)"));
    }
    let r = radius as isize;
    let denom = 2.0 * sigma * sigma;
    let mut taps = Vec::with_capacity((2 * radius + 1).pow(2));
    for i in -r..=r {
        for j in -r..=r {
            taps.push((-((i * i + j * j) as f64) / denom).exp());
        }
    }
    let total: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= total);
    Ok(BlurKernel {
        radius,
        sigma: Some(sigma),
        taps,
    })
}

/// Converts a FWHM in millimetres to a standard deviation in pixels.
pub fn fwhm_to_sigma(fwhm_mm: f64, pixel_mm: f64) -> Result<f64> {
    if !(fwhm_mm > 0.0) {
        return Err(Error::param("fwhm_mm", fwhm_mm, "must be positive"));
    }
    if !(pixel_mm > 0.0) {
        return Err(Error::param("pixel_mm", pixel_mm, "must be positive"));
    }
    Ok(fwhm_mm / (FWHM_PER_SIGMA * pixel_mm))
}

/// Smallest `m ≥ n` whose only prime factors are 2, 3 and 5.
pub fn next_fast_size(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut k = m;
        for p in [2, 3, 5] {
            while k.is_multiple_of(p) {
                k /= p;
            }
        }
        if k == 1 {
            return m;
        }
        m += 1;
    }
}

/// `K x` for a one-off convolution. Prefer [`BlurOperator`] in loops.
pub fn convolve(x: &ImageGrid, kernel: &BlurKernel, padding: Padding) -> Result<ImageGrid> {
    kernel.operator(x.width(), x.height(), padding)?.apply(x)
}

/// `K* y` for a one-off convolution.
pub fn adjoint_convolve(y: &ImageGrid, kernel: &BlurKernel, padding: Padding) -> Result<ImageGrid> {
    kernel.operator(y.width(), y.height(), padding)?.apply_adjoint(y)
}

/// A kernel bound to one grid size: `K` and `K*` via cached FFTs.
#[derive(Clone)]
pub struct BlurOperator {
    width: usize,
    height: usize,
    padding: Padding,
    radius: usize,
    pad: usize,
    fft_w: usize,
    fft_h: usize,
    /// Set for radius-0 kernels, which reduce to a scalar multiple.
    scalar: Option<f64>,
    /// Kernel spectrum in transposed (column-major) layout.
    spectrum: Vec<Complex64>,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for BlurOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BlurOperator")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("padding", &self.padding)
            .field("fft", &(self.fft_w, self.fft_h))
            .finish()
    }
}

impl BlurOperator {
    fn new(kernel: &BlurKernel, width: usize, height: usize, padding: Padding) -> Result<Self> {
        let side = kernel.side();
        if side > width || side > height {
            return Err(Error::KernelTooLarge {
                kernel: side,
                width,
                height,
            });
        }
        let (pad, fft_w, fft_h) = match padding {
            Padding::Replicate => {
                let pad = kernel.radius();
                (pad, next_fast_size(width + 2 * pad), next_fast_size(height + 2 * pad))
            }
            Padding::Periodic => (0, width, height),
        };
        let mut planner = FftPlanner::<f64>::new();
        let row_fwd = planner.plan_fft_forward(fft_w);
        let row_inv = planner.plan_fft_inverse(fft_w);
        let col_fwd = planner.plan_fft_forward(fft_h);
        let col_inv = planner.plan_fft_inverse(fft_h);

        let scalar = (kernel.radius() == 0).then(|| kernel.taps()[0]);
        let mut op = Self {
            width,
            height,
            padding,
            radius: kernel.radius(),
            pad,
            fft_w,
            fft_h,
            scalar,
            spectrum: Vec::new(),
            row_fwd,
            row_inv,
            col_fwd,
            col_inv,
        };
        if scalar.is_none() {
            let mut buf = vec![Complex64::new(0.0, 0.0); fft_w * fft_h];
            let r = kernel.radius() as isize;
            for dy in -r..=r {
                for dx in -r..=r {
                    let row = dy.rem_euclid(fft_h as isize) as usize;
                    let col = dx.rem_euclid(fft_w as isize) as usize;
                    buf[row * fft_w + col].re += kernel.tap(dy, dx);
                }
            }
            op.spectrum = op.forward(buf);
        }
        Ok(op)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn padding(&self) -> Padding {
        self.padding
    }

    /// Radius of the kernel this operator was built from.
    pub fn kernel_radius(&self) -> usize {
        self.radius
    }

    /// Transform grid size `(width, height)`.
    pub fn transform_size(&self) -> (usize, usize) {
        (self.fft_w, self.fft_h)
    }

    pub fn apply(&self, x: &ImageGrid) -> Result<ImageGrid> {
        self.check(x)?;
        let mut out = vec![0.0; x.len()];
        self.apply_into(x.values(), &mut out);
        Ok(ImageGrid::from_raw(self.width, self.height, out))
    }

    pub fn apply_adjoint(&self, y: &ImageGrid) -> Result<ImageGrid> {
        self.check(y)?;
        let mut out = vec![0.0; y.len()];
        self.apply_adjoint_into(y.values(), &mut out);
        Ok(ImageGrid::from_raw(self.width, self.height, out))
    }

    fn check(&self, x: &ImageGrid) -> Result<()> {
        if x.dims() != (self.width, self.height) {
            return Err(Error::DimensionMismatch {
                left: (self.width, self.height),
                right: x.dims(),
            });
        }
        Ok(())
    }

    pub(crate) fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        if let Some(s) = self.scalar {
            out.iter_mut().zip(x).for_each(|(o, v)| *o = s * v);
            return;
        }
        let (w, h, pad, fw) = (self.width, self.height, self.pad, self.fft_w);
        let mut buf = vec![Complex64::new(0.0, 0.0); fw * self.fft_h];
        for (pr, row) in buf.chunks_exact_mut(fw).enumerate() {
            let src = &x[clamp_index(pr, pad, h) * w..][..w];
            for (pc, v) in row.iter_mut().enumerate() {
                v.re = src[clamp_index(pc, pad, w)];
            }
        }
        let buf = self.filter(buf, false);
        for r in 0..h {
            let src = &buf[(r + pad) * fw + pad..][..w];
            for (o, v) in out[r * w..(r + 1) * w].iter_mut().zip(src) {
                *o = v.re;
            }
        }
    }

    pub(crate) fn apply_adjoint_into(&self, y: &[f64], out: &mut [f64]) {
        if let Some(s) = self.scalar {
            out.iter_mut().zip(y).for_each(|(o, v)| *o = s * v);
            return;
        }
        let (w, h, pad, fw) = (self.width, self.height, self.pad, self.fft_w);
        let mut buf = vec![Complex64::new(0.0, 0.0); fw * self.fft_h];
        for r in 0..h {
            let dst = &mut buf[(r + pad) * fw + pad..][..w];
            for (d, v) in dst.iter_mut().zip(&y[r * w..(r + 1) * w]) {
                d.re = *v;
            }
        }
        let buf = self.filter(buf, true);
        out.fill(0.0);
        for (pr, row) in buf.chunks_exact(fw).enumerate() {
            let dst = &mut out[clamp_index(pr, pad, h) * w..][..w];
            for (pc, v) in row.iter().enumerate() {
                dst[clamp_index(pc, pad, w)] += v.re;
            }
        }
    }

    /// Circular convolution (or correlation when `adjoint`) on the transform grid.
    fn filter(&self, buf: Vec<Complex64>, adjoint: bool) -> Vec<Complex64> {
        let mut spec = self.forward(buf);
        if adjoint {
            spec.iter_mut().zip(&self.spectrum).for_each(|(v, k)| *v *= k.conj());
        } else {
            spec.iter_mut().zip(&self.spectrum).for_each(|(v, k)| *v *= k);
        }
        self.inverse(spec)
    }

    /// Row-major spatial buffer to transposed spectrum.
    fn forward(&self, mut buf: Vec<Complex64>) -> Vec<Complex64> {
        self.row_fwd.process(&mut buf);
        let mut t = transpose(&buf, self.fft_w, self.fft_h);
        self.col_fwd.process(&mut t);
        t
    }

    /// Transposed spectrum back to a normalized row-major spatial buffer.
    fn inverse(&self, mut spec: Vec<Complex64>) -> Vec<Complex64> {
        self.col_inv.process(&mut spec);
        let mut buf = transpose(&spec, self.fft_h, self.fft_w);
        self.row_inv.process(&mut buf);
        let norm = 1.0 / (self.fft_w * self.fft_h) as f64;
        buf.iter_mut().for_each(|v| *v *= norm);
        buf
    }
}

/// Source index along one axis for padded position `p`.
fn clamp_index(p: usize, pad: usize, len: usize) -> usize {
    p.saturating_sub(pad).min(len - 1)
}

/// Transposes a `rows × cols` row-major buffer (`cols` = row length).
fn transpose(src: &[Complex64], cols: usize, rows: usize) -> Vec<Complex64> {
    let mut dst = vec![Complex64::new(0.0, 0.0); src.len()];
    const BLOCK: usize = 16;
    for rb in (0..rows).step_by(BLOCK) {
        for cb in (0..cols).step_by(BLOCK) {
            for r in rb..(rb + BLOCK).min(rows) {
                for c in cb..(cb + BLOCK).min(cols) {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
    dst
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> ImageGrid {
        ImageGrid::from_fn(w, h, |_, _| rng.gen_range(-1.0..1.0)).unwrap()
    }

    /// Direct spatial convolution of the replicate-padded image.
    fn spatial_replicate(x: &ImageGrid, k: &BlurKernel) -> ImageGrid {
        let r = k.radius() as isize;
        let (w, h) = (x.width() as isize, x.height() as isize);
        ImageGrid::from_fn(x.width(), x.height(), |row, col| {
            let mut acc = 0.0;
            for dy in -r..=r {
                for dx in -r..=r {
                    let sr = (row as isize - dy).clamp(0, h - 1) as usize;
                    let sc = (col as isize - dx).clamp(0, w - 1) as usize;
                    acc += k.tap(dy, dx) * x.get(sr, sc);
                }
            }
            acc
        })
        .unwrap()
    }

    #[test]
    fn taps_normalized_and_symmetric() {
        for sigma in [0.3, 1.0, 1.17, 2.5] {
            let k = BlurKernel::gaussian(sigma).unwrap();
            assert!((k.taps().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            let r = k.radius() as isize;
            for dy in -r..=r {
                for dx in -r..=r {
                    let t = k.tap(dy, dx);
                    assert_eq!(t, k.tap(-dy, dx));
                    assert_eq!(t, k.tap(dy, -dx));
                    assert_eq!(t, k.tap(dx, dy));
                    assert!(t <= k.tap(0, 0));
                }
            }
        }
    }

    #[test]
    fn fwhm_preset_sigma() {
        let sigma = fwhm_to_sigma(6.0, 2.2).unwrap();
        assert!((sigma - 1.158_166_091_301_844).abs() < 1e-12, "{sigma}");
    }

    #[test]
    fn rejects_bad_kernels() {
        assert!(BlurKernel::gaussian(0.0).is_err());
        assert!(gaussian_kernel(-1.0, 5).is_err());
        assert!(gaussian_kernel(1.17, 3).is_err());
        assert!(gaussian_kernel(1.17, 4).is_ok());
        let k = BlurKernel::gaussian(2.0).unwrap();
        let x = ImageGrid::zeros(8, 8).unwrap();
        assert!(matches!(convolve(&x, &k, Padding::Replicate), Err(Error::KernelTooLarge { .. })));
    }

    #[test]
    fn delta_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random_image(&mut rng, 9, 6);
        for padding in [Padding::Replicate, Padding::Periodic] {
            assert_eq!(convolve(&x, &BlurKernel::delta(), padding).unwrap(), x);
            assert_eq!(adjoint_convolve(&x, &BlurKernel::delta(), padding).unwrap(), x);
        }
    }

    #[test]
    fn constant_image_is_preserved() {
        let x = ImageGrid::filled(20, 17, 3.5).unwrap();
        let k = BlurKernel::gaussian(1.17).unwrap();
        let y = convolve(&x, &k, Padding::Replicate).unwrap();
        assert!(y.values().iter().all(|v| (v - 3.5).abs() <= 1e-10));
    }

    #[test]
    fn matches_spatial_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random_image(&mut rng, 16, 16);
        let k = BlurKernel::gaussian(1.17).unwrap();
        let fast = convolve(&x, &k, Padding::Replicate).unwrap();
        let slow = spatial_replicate(&x, &k);
        for (a, b) in fast.values().iter().zip(slow.values()) {
            assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn adjoint_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let k = BlurKernel::gaussian(1.17).unwrap();
        for padding in [Padding::Replicate, Padding::Periodic] {
            let op = k.operator(12, 12, padding).unwrap();
            for _ in 0..10 {
                let x = random_image(&mut rng, 12, 12);
                let y = random_image(&mut rng, 12, 12);
                let lhs = op.apply(&x).unwrap().dot(&y).unwrap();
                let rhs = x.dot(&op.apply_adjoint(&y).unwrap()).unwrap();
                assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(rhs.abs()));
            }
        }
    }

    #[test]
    fn periodic_symmetric_kernel_is_self_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let k = BlurKernel::gaussian(1.17).unwrap();
        let op = k.operator(15, 12, Padding::Periodic).unwrap();
        let x = random_image(&mut rng, 15, 12);
        let a = op.apply(&x).unwrap();
        let b = op.apply_adjoint(&x).unwrap();
        for (p, q) in a.values().iter().zip(b.values()) {
            assert!((p - q).abs() <= 1e-10);
        }
    }

    #[test]
    fn interior_translation_consistency() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let k = BlurKernel::gaussian(1.17).unwrap();
        let x = random_image(&mut rng, 24, 20);
        let shifted = ImageGrid::from_fn(24, 20, |r, c| x.get(r, c.saturating_sub(1))).unwrap();
        let a = convolve(&x, &k, Padding::Replicate).unwrap();
        let b = convolve(&shifted, &k, Padding::Replicate).unwrap();
        let band = k.radius() + 1;
        for r in 0..20 {
            for c in band..24 - band {
                assert!((b.get(r, c + 1) - a.get(r, c)).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn fast_sizes() {
        assert_eq!(next_fast_size(128 + 10), 144);
        assert_eq!(next_fast_size(7), 8);
        assert_eq!(next_fast_size(11), 12);
        assert_eq!(next_fast_size(1), 1);
        assert_eq!(next_fast_size(30), 30);
    }
}
