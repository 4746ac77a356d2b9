//! Automatic choice of `λ` by the Poisson discrepancy principle.
//!
//! `λ` is tuned so that `KL(z, K û_λ) ≈ M/2`, where `M` counts the pixels
//! of the object support. Each meta-iteration restores with the current `λ`
//! and then rescales it by the *KL ratio* `KL(z, K û_λ) / (M/2)`. A ratio
//! above one means the fit is too loose, so `λ` (the data weight) grows.
//!
//! Up to the factor `λ` and the constant `r(z)`, `KL(z, Ku)` equals the data
//! term at `Ku` minus its value at `z`, so the rule targets a fixed distance
//! in the range of the data term.
//!
//! The expected `KL ≈ M/2` holds for pixels whose mean is large enough for
//! a second-order expansion, in an image with an empty background. At low
//! activity the object shows up in `z` as scattered isolated counts, and the
//! nonzero count falls far below the support; the target then becomes
//! unreachable and `λ` runs off. [`SupportCount::ClosedByPsf`] (the default)
//! measures the support as the morphological closing of the nonzero set by
//! the PSF radius, which tracks the support of `K u₀` across activities.
//! [`SupportCount::Nonzero`] keeps the plain nonzero count.
//!
//! The rule assumes pure Poisson data. It does not apply to images whose noise
//! has been reshaped by reconstruction; use a fixed `λ` for those.

use crate::blur::BlurKernel;
use crate::error::{Error, Result};
use crate::grid::{guarded_log, ImageGrid};
use crate::solver::{Feasibility, RestorationResult, Restorer, SolverConfig};

/// Admissible range for `λ` during tuning.
pub const LAMBDA_RANGE: (f64, f64) = (1e-8, 1e8);
/// Early stop once `|ratio − 1|` falls below this.
pub const RATIO_TOLERANCE: f64 = 0.01;
/// Meta-iterations used when none are specified.
pub const DEFAULT_META_ITERS: usize = 20;
pub const DEFAULT_LAMBDA0: f64 = 1.0;
pub const DEFAULT_MIN_INNER_ITERS: usize = 100;

/// `KL(x, y) = Σ(y − x + x·f(x) − x·f(y))` with the guarded log `f`.
pub fn kl_divergence(x: &ImageGrid, y: &ImageGrid) -> Result<f64> {
    x.check_same_dims(y)?;
    for img in [x, y] {
        if let Some((index, &value)) = img.values().iter().enumerate().find(|(_, v)| **v < 0.0) {
            return Err(Error::NegativeValue { index, value });
        }
    }
    Ok(kl_unchecked(x.values(), y.values()))
}

/// [`kl_divergence`] without the sign check; `y` may carry round-off
/// negatives from the blur of a nearly nonnegative estimate.
pub(crate) fn kl_unchecked(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(&a, &b)| b - a + a * guarded_log(a) - a * guarded_log(b))
        .sum()
}

/// Number of pixels with value `≠ 0`.
pub fn count_nonzero(z: &ImageGrid) -> usize {
    z.values().iter().filter(|&&v| v != 0.0).count()
}

/// Pixels in the morphological closing of `z`'s nonzero set by a disk of
/// the given radius.
///
/// At low counts the object shows up in `z` as a sieve of isolated nonzero
/// pixels; closing fills those holes without growing the outer boundary, so
/// the count tracks the object support rather than the number of detected
/// events. With `radius == 0` this is [`count_nonzero`].
pub fn closed_support_size(z: &ImageGrid, radius: usize) -> usize {
    let (w, h) = z.dims();
    let mask: Vec<bool> = z.values().iter().map(|&v| v != 0.0).collect();
    if radius == 0 {
        return mask.iter().filter(|&&m| m).count();
    }
    let r = radius as isize;
    let disk: Vec<(isize, isize)> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dy, dx)))
        .filter(|(dy, dx)| dy * dy + dx * dx <= r * r)
        .collect();
    let at = |m: &[bool], row: isize, col: isize, outside: bool| {
        if row < 0 || col < 0 || row >= h as isize || col >= w as isize {
            outside
        } else {
            m[row as usize * w + col as usize]
        }
    };
    let mut dilated = vec![false; w * h];
    for row in 0..h as isize {
        for col in 0..w as isize {
            dilated[row as usize * w + col as usize] = disk.iter().any(|(dy, dx)| at(&mask, row + dy, col + dx, false));
        }
    }
    let mut count = 0;
    for row in 0..h as isize {
        for col in 0..w as isize {
            // Outside counts as set so the border does not erode.
            if disk.iter().all(|(dy, dx)| at(&dilated, row + dy, col + dx, true)) {
                count += 1;
            }
        }
    }
    count
}

/// Settings for [`tune_lambda`] beyond the per-solve [`SolverConfig`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TuneOptions {
    pub meta_iters: usize,
    pub lambda0: f64,
    /// Carry primal, dual and step sizes from one meta-iteration to the next.
    pub warm_start: bool,
    /// Stop once the ratio is within [`RATIO_TOLERANCE`] of one.
    pub early_stop: bool,
    /// Lower bound on inner iterations per meta-iteration. After a warm
    /// start the iterate moves slowly, and the relative-change test alone
    /// would accept it before it responds to the new `λ`.
    pub min_inner_iters: usize,
    /// How the pixel count `M` of the target `M/2` is taken from `z`.
    pub support: SupportCount,
}

/// Definition of the pixel count `M` in the discrepancy target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SupportCount {
    /// Nonzero pixels of `z`.
    Nonzero,
    /// [`closed_support_size`] with the PSF radius.
    #[default]
    ClosedByPsf,
    /// [`closed_support_size`] with a fixed radius.
    Closed(usize),
}

impl SupportCount {
    pub fn count(&self, z: &ImageGrid, psf_radius: usize) -> usize {
        match *self {
            SupportCount::Nonzero => count_nonzero(z),
            SupportCount::ClosedByPsf => closed_support_size(z, psf_radius),
            SupportCount::Closed(r) => closed_support_size(z, r),
        }
    }
}

impl std::str::FromStr for SupportCount {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "nonzero" => Ok(SupportCount::Nonzero),
            "closed" | "closed-psf" => Ok(SupportCount::ClosedByPsf),
            other => other
                .strip_prefix("closed:")
                .and_then(|r| r.parse().ok())
                .map(SupportCount::Closed)
                .ok_or_else(|| format!("unknown support count `{other}` (expected nonzero|closed|closed:<radius>)")),
        }
    }
}

impl std::fmt::Display for SupportCount {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SupportCount::Nonzero => f.write_str("nonzero"),
            SupportCount::ClosedByPsf => f.write_str("closed"),
            SupportCount::Closed(r) => write!(f, "closed:{r}"),
        }
    }
}

impl Default for TuneOptions {
    fn default() -> Self {
        Self {
            meta_iters: DEFAULT_META_ITERS,
            lambda0: DEFAULT_LAMBDA0,
            warm_start: true,
            early_stop: true,
            support: SupportCount::ClosedByPsf,
            min_inner_iters: DEFAULT_MIN_INNER_ITERS,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MetaTuneResult {
    /// `λ` used at each meta-iteration.
    pub lambda_trace: Vec<f64>,
    /// KL ratio obtained with the matching entry of `lambda_trace`.
    pub kl_ratio_trace: Vec<f64>,
    /// Inner iterations spent at each meta-iteration.
    pub iteration_trace: Vec<usize>,
    pub final_result: RestorationResult,
    pub meta_iterations: usize,
    /// The count `M` behind the target `M/2`.
    pub support_size: usize,
    /// Constraint figures over every inner iteration of every meta-iteration.
    pub feasibility: Feasibility,
}

impl MetaTuneResult {
    /// The `λ` the final restoration was computed with.
    pub fn final_lambda(&self) -> f64 {
        *self.lambda_trace.last().expect("at least one meta-iteration")
    }

    pub fn final_ratio(&self) -> f64 {
        *self.kl_ratio_trace.last().expect("at least one meta-iteration")
    }

    pub fn total_iterations(&self) -> usize {
        self.iteration_trace.iter().sum()
    }
}

/// Tunes `λ` over at most `opts.meta_iters` restorations of `z`.
///
/// `cfg.lambda` is ignored in favour of `opts.lambda0`.
pub fn tune_lambda(z: &ImageGrid, kernel: &BlurKernel, cfg: &SolverConfig, opts: &TuneOptions) -> Result<MetaTuneResult> {
    let restorer = Restorer::new(z, kernel, cfg.padding)?;
    tune_with(&restorer, cfg, opts)
}

/// [`tune_lambda`] reusing an existing [`Restorer`].
pub fn tune_with(restorer: &Restorer, cfg: &SolverConfig, opts: &TuneOptions) -> Result<MetaTuneResult> {
    if opts.meta_iters == 0 {
        return Err(Error::param("meta_iters", 0.0, "must be at least 1"));
    }
    let (lo, hi) = LAMBDA_RANGE;
    if !(opts.lambda0 >= lo && opts.lambda0 <= hi) {
        return Err(Error::param("lambda0", opts.lambda0, "must lie in [1e-8, 1e8]"));
    }
    let support_size = opts.support.count(restorer.observation(), restorer.blur().kernel_radius());
    let target = support_size as f64 / 2.0;

    let mut lambda = opts.lambda0;
    let mut lambda_trace = Vec::with_capacity(opts.meta_iters);
    let mut kl_ratio_trace = Vec::with_capacity(opts.meta_iters);
    let mut iteration_trace = Vec::with_capacity(opts.meta_iters);
    let mut last: Option<RestorationResult> = None;
    let mut feasibility = Feasibility::default();

    for meta in 1..=opts.meta_iters {
        let run_cfg = SolverConfig {
            lambda,
            min_iters: cfg.min_iters.max(opts.min_inner_iters).min(cfg.max_iters),
            ..cfg.clone()
        };
        let warm = if opts.warm_start { last.as_ref().map(|r| &r.state) } else { None };
        let result = restorer.restore(&run_cfg, warm)?;
        let ratio = result.kl_value / target;
        lambda_trace.push(lambda);
        kl_ratio_trace.push(ratio);
        iteration_trace.push(result.iterations);
        feasibility = feasibility.worst(result.feasibility);
        last = Some(result);

        if opts.early_stop && (ratio - 1.0).abs() < RATIO_TOLERANCE {
            break;
        }
        if meta == opts.meta_iters {
            break;
        }
        let next = lambda * ratio;
        if !(next >= lo && next <= hi) {
            return Err(Error::LambdaOutOfRange {
                lambda: next,
                min: lo,
                max: hi,
                meta_iteration: meta,
            });
        }
        lambda = next;
    }

    Ok(MetaTuneResult {
        meta_iterations: lambda_trace.len(),
        lambda_trace,
        kl_ratio_trace,
        iteration_trace,
        final_result: last.expect("at least one meta-iteration"),
        support_size,
        feasibility,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn kl_of_identical_images_is_zero() {
        let x = ImageGrid::from_vec(2, 2, vec![0.0, 1.0, 2.5, 7.0]).unwrap();
        assert_eq!(kl_divergence(&x, &x).unwrap(), 0.0);
    }

    #[test]
    fn kl_worked_example() {
        let x = ImageGrid::from_vec(2, 2, vec![2.0, 0.0, 0.0, 0.0]).unwrap();
        let y = ImageGrid::from_vec(2, 2, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let kl = kl_divergence(&x, &y).unwrap();
        assert!((kl - (1.0 - 2.0 + 2.0 * 2f64.ln())).abs() < 1e-15);
        assert!((kl - 0.386_294).abs() < 1e-6);
    }

    #[test]
    fn kl_rejects_negative_input() {
        let x = ImageGrid::from_vec(2, 2, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let y = ImageGrid::from_vec(2, 2, vec![1.0, -0.5, 0.0, 0.0]).unwrap();
        assert!(matches!(kl_divergence(&x, &y), Err(Error::NegativeValue { .. })));
    }

    #[test]
    fn nonzero_counts() {
        assert_eq!(count_nonzero(&ImageGrid::zeros(5, 4).unwrap()), 0);
        assert_eq!(count_nonzero(&ImageGrid::filled(5, 4, 0.1).unwrap()), 20);
    }

    proptest! {
        #[test]
        fn kl_nonnegative_and_zero_only_on_match(
            x in proptest::collection::vec(0.0f64..20.0, 6),
            y in proptest::collection::vec(0.01f64..20.0, 6),
        ) {
            let xi = ImageGrid::from_vec(3, 2, x.clone()).unwrap();
            let yi = ImageGrid::from_vec(3, 2, y.clone()).unwrap();
            let kl = kl_divergence(&xi, &yi).unwrap();
            prop_assert!(kl >= -1e-12);
            let differs = x.iter().zip(&y).any(|(a, b)| (a - b).abs() > 1e-3);
            if differs {
                prop_assert!(kl > 0.0);
            }
        }
    }
}
