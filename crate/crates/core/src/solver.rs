//! Chambolle–Pock primal-dual iteration for TGV (or TV) regularized Poisson
//! deconvolution under positivity and photometry constraints.
//!
//! The primal variable is `x = (u, w)` and the dual `y = (p, q, r)`, coupled
//! by the stacked operator
//!
//! ```text
//! L(u, w) = (K u, ∇u − w, ε(w)),   L*(p, q, r) = (K*p − div q, −q + ε*(r)).
//! ```
//!
//! Each iteration takes a dual step with the current over-relaxed primal
//! point, then a primal step with the *updated* duals:
//!
//! ```text
//! p ← prox_{σF₁*}(p + σ K ū)
//! q ← proj_1(q + σ(∇ū − w̄))
//! r ← proj_α(r + σ ε(w̄))
//! u⁺ ← prox_{τG}(u + τ(div q − K* p))
//! w⁺ ← w + τ(q − ε*(r))
//! ū ← 2u⁺ − u,  w̄ ← 2w⁺ − w
//! ```
//!
//! TV mode drops `w`, `r` and the `ε` term. The solver never applies `L`
//! to `x̄`: it keeps `L x` for the last two primal iterates and forms
//! `L x̄ = 2 L x⁺ − L x` by linearity, which also yields the dual residual
//! at no extra cost.

use std::time::Instant;

use crate::blur::{BlurKernel, BlurOperator, Padding};
use crate::diff::{div_into, grad_into, sym_adjoint_into, sym_into};
use crate::error::{Error, Result};
use crate::grid::{dot, guarded_log, lpq_norm, ImageGrid, TensorField};
use crate::opnorm::{operator_norm_estimate_seeded, NormEstimate, DEFAULT_START_SEED};
use crate::prox::{
    prox_f1_star_in_place, prox_g_in_place, project_l2inf_in_place, project_positive_photometry_in_place,
};

/// Regularizer selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub enum Mode {
    /// First-order total variation, `‖∇u‖_{2,1}`.
    Tv,
    /// Second-order total generalized variation.
    #[default]
    Tgv,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "tv" => Ok(Mode::Tv),
            "tgv" => Ok(Mode::Tgv),
            other => Err(format!("unknown mode `{other}` (expected tv|tgv)")),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Tv => "TV",
            Mode::Tgv => "TGV",
        })
    }
}

/// Which proximal map realizes the positivity + photometry constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConstraintProx {
    /// `max(x̃, 0)` followed by the mean shift ([`crate::prox::prox_g`]).
    /// Only exact while nothing is clamped; otherwise the iteration's fixed
    /// point depends on the step sizes and misses the constrained minimizer.
    Sequential,
    /// Exact projection onto `{u ⪰ 0, Σu = Σz}`.
    #[default]
    Exact,
}

impl std::str::FromStr for ConstraintProx {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "sequential" => Ok(ConstraintProx::Sequential),
            "exact" => Ok(ConstraintProx::Exact),
            other => Err(format!("unknown constraint prox `{other}` (expected sequential|exact)")),
        }
    }
}

/// Residual ratio that triggers a step-size rebalance.
pub const ADAPT_TRIGGER: f64 = 10.0;
/// Multiplicative step-size change of the first rebalance in a run.
pub const ADAPT_FACTOR: f64 = 1.5;
/// Each rebalance shrinks the excess `factor − 1` of the next one by this
/// much. A non-decaying factor can cycle forever instead of converging.
pub const ADAPT_DECAY: f64 = 0.95;

/// Tolerance and iteration cap for the power iteration estimating `‖L‖₂`.
const NORM_TOL: f64 = 1e-4;
const NORM_MAX_ITERS: usize = 2000;

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub mode: Mode,
    /// Weight of the second-order term.
    pub alpha: f64,
    /// Weight of the data term.
    pub lambda: f64,
    /// `τ⁽⁰⁾ = σ⁽⁰⁾ = step_safety / ‖L‖₂`.
    pub step_safety: f64,
    pub max_iters: usize,
    /// Iterations run before the stopping test is consulted.
    pub min_iters: usize,
    /// Stop once `‖u⁺ − u‖₂ / ‖u‖₂ < rel_tol`.
    pub rel_tol: f64,
    /// Rebalance `τ`, `σ` from the primal and dual residuals.
    pub adapt_steps: bool,
    pub padding: Padding,
    /// Clamp negative pixels of the final estimate to zero.
    pub post_clamp: bool,
    pub constraint_prox: ConstraintProx,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Tgv,
            alpha: 2.0,
            lambda: 1.0,
            step_safety: 0.9,
            max_iters: 2000,
            min_iters: 0,
            rel_tol: 1e-5,
            adapt_steps: true,
            padding: Padding::Replicate,
            post_clamp: false,
            constraint_prox: ConstraintProx::Exact,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::param("alpha", self.alpha, "must be positive"));
        }
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(Error::param("lambda", self.lambda, "must be positive"));
        }
        if !(self.step_safety > 0.0 && self.step_safety < 1.0) {
            return Err(Error::param("step_safety", self.step_safety, "must lie in (0, 1)"));
        }
        if !(self.rel_tol >= 0.0) {
            return Err(Error::param("rel_tol", self.rel_tol, "must be nonnegative"));
        }
        if self.max_iters == 0 {
            return Err(Error::param("max_iters", 0.0, "must be at least 1"));
        }
        Ok(())
    }
}

/// Primal and dual iterates plus step sizes; the warm-start handle.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub u: ImageGrid,
    /// Auxiliary field (all zeros in TV mode).
    pub w: TensorField,
    pub p: ImageGrid,
    pub q: TensorField,
    /// Second-order dual (all zeros in TV mode).
    pub r: TensorField,
    pub tau: f64,
    pub sigma: f64,
}

/// Worst-case constraint figures observed over all iterations of a run.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Feasibility {
    /// `max_n |Σu⁽ⁿ⁾ − Σz| / Σz`.
    pub photometry_error: f64,
    /// `max_n ‖q⁽ⁿ⁾‖_{2,∞}`.
    pub max_q_norm: f64,
    /// `max_n ‖r⁽ⁿ⁾‖_{2,∞}`.
    pub max_r_norm: f64,
}

impl Feasibility {
    /// Componentwise maximum, for aggregating over several runs.
    pub fn worst(self, other: Feasibility) -> Feasibility {
        Feasibility {
            photometry_error: self.photometry_error.max(other.photometry_error),
            max_q_norm: self.max_q_norm.max(other.max_q_norm),
            max_r_norm: self.max_r_norm.max(other.max_r_norm),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RestorationResult {
    pub u_hat: ImageGrid,
    /// Auxiliary field `ŵ`, TGV mode only.
    pub w_hat: Option<TensorField>,
    /// `K û`.
    pub blurred: ImageGrid,
    pub iterations: usize,
    /// Objective after every iteration, without the constant `r(z)`.
    pub objective_trace: Vec<f64>,
    /// `KL(z, K û)`.
    pub kl_value: f64,
    pub converged: bool,
    pub state: SolverState,
    pub feasibility: Feasibility,
    /// Power-iteration estimate of `‖L‖₂`.
    pub operator_norm: NormEstimate,
    pub wall_time: f64,
}

/// One-shot restoration of `z` blurred by `kernel`.
pub fn cp_restore(z: &ImageGrid, kernel: &BlurKernel, cfg: &SolverConfig) -> Result<RestorationResult> {
    Restorer::new(z, kernel, cfg.padding)?.restore(cfg, None)
}

/// Residual balancing: a primal residual more than [`ADAPT_TRIGGER`] times the
/// dual one enlarges `τ` and shrinks `σ` by [`ADAPT_FACTOR`], and vice versa.
/// The product `στ` is preserved.
pub fn adapt_steps(primal_residual: f64, dual_residual: f64, tau: f64, sigma: f64) -> (f64, f64) {
    adapt_steps_by(primal_residual, dual_residual, tau, sigma, ADAPT_FACTOR)
}

/// [`adapt_steps`] with an explicit change `factor > 1`.
pub fn adapt_steps_by(primal_residual: f64, dual_residual: f64, tau: f64, sigma: f64, factor: f64) -> (f64, f64) {
    if primal_residual > ADAPT_TRIGGER * dual_residual {
        (tau * factor, sigma / factor)
    } else if dual_residual > ADAPT_TRIGGER * primal_residual {
        (tau / factor, sigma * factor)
    } else {
        (tau, sigma)
    }
}

/// `λ Σ(Ku − z·f(Ku)) + ‖∇u − w‖_{2,1} + α‖ε(w)‖_{2,1}`; TV mode ignores `w`.
///
/// The indicator terms are not included; check feasibility separately.
pub fn objective_value(
    u: &ImageGrid,
    w: Option<&TensorField>,
    z: &ImageGrid,
    blur: &BlurOperator,
    mode: Mode,
    alpha: f64,
    lambda: f64,
) -> Result<f64> {
    u.check_same_dims(z)?;
    let ku = blur.apply(u)?;
    let data: f64 = ku.values().iter().zip(z.values()).map(|(&k, &zi)| k - zi * guarded_log(k)).sum();
    let mut grad = crate::diff::image_gradient(u);
    let mut second = 0.0;
    if let (Mode::Tgv, Some(w)) = (mode, w) {
        if w.dims() != u.dims() || w.arity() != 2 {
            return Err(Error::DimensionMismatch {
                left: u.dims(),
                right: w.dims(),
            });
        }
        for (g, v) in grad.values_mut().iter_mut().zip(w.values()) {
            *g -= v;
        }
        second = alpha * lpq_norm(&crate::diff::sym_derivative(w)?, 2.0, 1.0)?;
    }
    Ok(lambda * data + lpq_norm(&grad, 2.0, 1.0)? + second)
}

/// Restoration context for one observation and kernel: owns the blur
/// operator and caches `‖L‖₂` per mode, so repeated solves (e.g. during
/// parameter tuning) pay for the setup once.
#[derive(Debug)]
pub struct Restorer {
    z: ImageGrid,
    z_sum: f64,
    blur: BlurOperator,
    norm_seed: u64,
    norms: std::sync::Mutex<[Option<NormEstimate>; 2]>,
}

impl Restorer {
    pub fn new(z: &ImageGrid, kernel: &BlurKernel, padding: Padding) -> Result<Self> {
        if let Some((index, &value)) = z.values().iter().enumerate().find(|(_, v)| **v < 0.0) {
            return Err(Error::NegativeValue { index, value });
        }
        let z_sum = z.sum();
        if !(z_sum > 0.0) {
            return Err(Error::EmptyObservation);
        }
        Ok(Self {
            z: z.clone(),
            z_sum,
            blur: kernel.operator(z.width(), z.height(), padding)?,
            norm_seed: DEFAULT_START_SEED,
            norms: std::sync::Mutex::new([None, None]),
        })
    }

    /// Seeds the start vector of the `‖L‖₂` power iteration.
    pub fn with_norm_seed(mut self, seed: u64) -> Self {
        self.norm_seed = seed;
        *self.norms.get_mut().expect("norm cache poisoned") = [None, None];
        self
    }

    pub fn observation(&self) -> &ImageGrid {
        &self.z
    }

    pub fn blur(&self) -> &BlurOperator {
        &self.blur
    }

    /// `‖L‖₂` for the stacked operator of `mode`, estimated once and cached.
    pub fn operator_norm(&self, mode: Mode) -> Result<NormEstimate> {
        let slot = mode as usize;
        if let Some(n) = self.norms.lock().expect("norm cache poisoned")[slot] {
            return Ok(n);
        }
        let ops = Operators::new(&self.blur, mode == Mode::Tgv);
        let dim = ops.primal_len();
        let est = operator_norm_estimate_seeded(
            |x| {
                let mut out = vec![0.0; ops.dual_len()];
                ops.forward(x, &mut out);
                out
            },
            |y| {
                let mut out = vec![0.0; dim];
                ops.adjoint(y, &mut out);
                out
            },
            dim,
            NORM_TOL,
            NORM_MAX_ITERS,
            self.norm_seed,
        )?;
        self.norms.lock().expect("norm cache poisoned")[slot] = Some(est);
        Ok(est)
    }

    /// Runs the iteration from `warm` (or the cold start `u = z`, everything
    /// else zero, `τ = σ = step_safety / ‖L‖₂`).
    pub fn restore(&self, cfg: &SolverConfig, warm: Option<&SolverState>) -> Result<RestorationResult> {
        self.run(cfg, warm, false)
    }

    fn run(&self, cfg: &SolverConfig, warm: Option<&SolverState>, freeze_w: bool) -> Result<RestorationResult> {
        cfg.validate()?;
        let start = Instant::now();
        let tgv = cfg.mode == Mode::Tgv;
        let w_active = tgv && !freeze_w;
        let norm = self.operator_norm(if w_active { Mode::Tgv } else { Mode::Tv })?;
        let ops = Operators::new(&self.blur, tgv);
        let (width, height) = self.z.dims();
        let n = ops.n;
        let z = self.z.values();

        let mut x = vec![0.0; ops.primal_len()];
        let mut y = vec![0.0; ops.dual_len()];
        let (mut tau, mut sigma);
        match warm {
            Some(s) => {
                if s.u.dims() != self.z.dims() {
                    return Err(Error::DimensionMismatch {
                        left: self.z.dims(),
                        right: s.u.dims(),
                    });
                }
                x[..n].copy_from_slice(s.u.values());
                y[..n].copy_from_slice(s.p.values());
                y[n..3 * n].copy_from_slice(s.q.values());
                if tgv {
                    x[n..].copy_from_slice(s.w.values());
                    y[3 * n..].copy_from_slice(s.r.values());
                }
                tau = s.tau;
                sigma = s.sigma;
            }
            None => {
                x[..n].copy_from_slice(z);
                tau = cfg.step_safety / norm.bound();
                sigma = tau;
            }
        }

        let mut lx = vec![0.0; ops.dual_len()];
        ops.forward(&x, &mut lx);
        let mut lx_bar = lx.clone();
        let mut lx_next = vec![0.0; ops.dual_len()];
        let mut lty = vec![0.0; ops.primal_len()];
        let mut x_next = vec![0.0; ops.primal_len()];
        let mut dy = vec![0.0; ops.dual_len()];
        let mut scratch = Vec::new();

        let mut trace = Vec::with_capacity(cfg.max_iters.min(100_000));
        let mut feas = Feasibility::default();
        let mut converged = false;
        let mut iterations = 0;
        let mut factor = ADAPT_FACTOR;

        for it in 1..=cfg.max_iters {
            iterations = it;
            // Dual step, remembering y_k − y_{k+1} for the residual.
            dy.copy_from_slice(&y);
            for (yi, li) in y.iter_mut().zip(&lx_bar) {
                *yi += sigma * li;
            }
            prox_f1_star_in_place(&mut y[..n], sigma, cfg.lambda, z);
            project_l2inf_in_place(&mut y[n..3 * n], 2, 1.0);
            if tgv {
                if w_active {
                    project_l2inf_in_place(&mut y[3 * n..], 4, cfg.alpha);
                } else {
                    y[3 * n..].fill(0.0);
                }
            }
            for (d, yi) in dy.iter_mut().zip(&y) {
                *d -= yi;
            }

            // Primal step with the updated duals.
            ops.adjoint(&y, &mut lty);
            for ((xn, xi), g) in x_next.iter_mut().zip(&x).zip(&lty) {
                *xn = xi - tau * g;
            }
            match cfg.constraint_prox {
                ConstraintProx::Sequential => prox_g_in_place(&mut x_next[..n], self.z_sum),
                ConstraintProx::Exact => {
                    project_positive_photometry_in_place(&mut x_next[..n], self.z_sum, &mut scratch)
                }
            }
            if tgv && !w_active {
                x_next[n..].fill(0.0);
            }
            if !x_next[..n].iter().all(|v| v.is_finite()) {
                return Err(Error::Diverged { iteration: it });
            }

            ops.forward(&x_next, &mut lx_next);

            // Residuals: P = ‖x_k − x_{k+1}‖/τ, D = ‖(y_k − y_{k+1})/σ − L(x_{k+1} − x̄_k)‖.
            let mut dx_sq = 0.0;
            let mut du_sq = 0.0;
            for (i, (a, b)) in x.iter().zip(&x_next).enumerate() {
                let d = a - b;
                dx_sq += d * d;
                if i < n {
                    du_sq += d * d;
                }
            }
            let primal_res = dx_sq.sqrt() / tau;
            let mut dual_sq = 0.0;
            for ((d, ln), lb) in dy.iter().zip(&lx_next).zip(&lx_bar) {
                let v = d / sigma - (ln - lb);
                dual_sq += v * v;
            }
            let dual_res = dual_sq.sqrt();

            for ((lb, ln), l) in lx_bar.iter_mut().zip(&lx_next).zip(&lx) {
                *lb = 2.0 * ln - l;
            }
            std::mem::swap(&mut lx, &mut lx_next);
            let u_norm = dot(&x[..n], &x[..n]).sqrt();
            std::mem::swap(&mut x, &mut x_next);

            trace.push(ops.objective(&lx, z, cfg.lambda, cfg.alpha));
            let u_sum: f64 = x[..n].iter().sum();
            feas.photometry_error = feas.photometry_error.max((u_sum - self.z_sum).abs() / self.z_sum);
            feas.max_q_norm = feas.max_q_norm.max(max_pixel_norm(&y[n..3 * n], 2));
            if tgv {
                feas.max_r_norm = feas.max_r_norm.max(max_pixel_norm(&y[3 * n..], 4));
            }

            if it >= cfg.min_iters && du_sq.sqrt() < cfg.rel_tol * u_norm {
                converged = true;
                break;
            }
            if cfg.adapt_steps {
                let (t, s) = adapt_steps_by(primal_res, dual_res, tau, sigma, factor);
                if t != tau {
                    factor = 1.0 + (factor - 1.0) * ADAPT_DECAY;
                }
                (tau, sigma) = (t, s);
            }
        }

        let mut u_hat = x[..n].to_vec();
        if cfg.post_clamp {
            u_hat.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        let u_hat = ImageGrid::from_raw(width, height, u_hat);
        let mut blurred = vec![0.0; n];
        self.blur.apply_into(u_hat.values(), &mut blurred);
        let blurred = ImageGrid::from_raw(width, height, blurred);
        let kl_value = crate::tuner::kl_unchecked(z, blurred.values());

        let w = if tgv {
            TensorField::from_raw(width, height, 2, x[n..].to_vec())
        } else {
            TensorField::from_raw(width, height, 2, vec![0.0; 2 * n])
        };
        let r = if tgv {
            TensorField::from_raw(width, height, 4, y[3 * n..].to_vec())
        } else {
            TensorField::from_raw(width, height, 4, vec![0.0; 4 * n])
        };
        let state = SolverState {
            u: ImageGrid::from_raw(width, height, x[..n].to_vec()),
            w: w.clone(),
            p: ImageGrid::from_raw(width, height, y[..n].to_vec()),
            q: TensorField::from_raw(width, height, 2, y[n..3 * n].to_vec()),
            r,
            tau,
            sigma,
        };
        Ok(RestorationResult {
            u_hat,
            w_hat: tgv.then_some(w),
            blurred,
            iterations,
            objective_trace: trace,
            kl_value,
            converged,
            state,
            feasibility: feas,
            operator_norm: norm,
            wall_time: start.elapsed().as_secs_f64(),
        })
    }
}

fn max_pixel_norm(v: &[f64], arity: usize) -> f64 {
    let n = v.len() / arity;
    (0..n)
        .map(|i| (0..arity).map(|c| v[c * n + i] * v[c * n + i]).sum::<f64>())
        .fold(0.0, f64::max)
        .sqrt()
}

/// `L` and `L*` on flat buffers. Primal layout `[u | w]`, dual `[p | q | r]`.
struct Operators<'a> {
    blur: &'a BlurOperator,
    tgv: bool,
    width: usize,
    height: usize,
    n: usize,
}

impl<'a> Operators<'a> {
    fn new(blur: &'a BlurOperator, tgv: bool) -> Self {
        let (width, height) = (blur.width(), blur.height());
        Self {
            blur,
            tgv,
            width,
            height,
            n: width * height,
        }
    }

    fn primal_len(&self) -> usize {
        if self.tgv {
            3 * self.n
        } else {
            self.n
        }
    }

    fn dual_len(&self) -> usize {
        if self.tgv {
            7 * self.n
        } else {
            3 * self.n
        }
    }

    fn forward(&self, x: &[f64], out: &mut [f64]) {
        let (n, w, h) = (self.n, self.width, self.height);
        let (u, wf) = x.split_at(n);
        let (ku, rest) = out.split_at_mut(n);
        let (gq, er) = rest.split_at_mut(2 * n);
        self.blur.apply_into(u, ku);
        grad_into(u, gq, w, h);
        if self.tgv {
            for (g, v) in gq.iter_mut().zip(wf) {
                *g -= v;
            }
            let mut scratch = vec![0.0; n];
            sym_into(wf, er, &mut scratch, w, h);
        }
    }

    fn adjoint(&self, y: &[f64], out: &mut [f64]) {
        let (n, w, h) = (self.n, self.width, self.height);
        let (p, rest) = y.split_at(n);
        let (q, r) = rest.split_at(2 * n);
        let (ou, ow) = out.split_at_mut(n);
        let mut div = vec![0.0; n];
        div_into(q, &mut div, w, h);
        self.blur.apply_adjoint_into(p, ou);
        for (o, d) in ou.iter_mut().zip(&div) {
            *o -= d;
        }
        if self.tgv {
            let mut scratch = vec![0.0; n];
            sym_adjoint_into(r, ow, &mut scratch, w, h);
            for (o, qi) in ow.iter_mut().zip(q) {
                *o -= qi;
            }
        }
    }

    /// Objective from a precomputed `L x`.
    fn objective(&self, lx: &[f64], z: &[f64], lambda: f64, alpha: f64) -> f64 {
        let n = self.n;
        let data: f64 = lx[..n].iter().zip(z).map(|(&k, &zi)| k - zi * guarded_log(k)).sum();
        let first: f64 = (0..n)
            .map(|i| (lx[n + i] * lx[n + i] + lx[2 * n + i] * lx[2 * n + i]).sqrt())
            .sum();
        let second: f64 = if self.tgv {
            (0..n)
                .map(|i| (0..4).map(|c| lx[(3 + c) * n + i].powi(2)).sum::<f64>().sqrt())
                .sum()
        } else {
            0.0
        };
        lambda * data + first + alpha * second
    }
}
