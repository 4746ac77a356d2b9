//! The synthetic experiment: phantom → degradation → tuned restoration for a
//! grid of activity levels and both regularizers.
//!
//! Each activity level `β_i` gets the seed `base_seed + i`, and TV and TGV
//! restore the same observation. Jobs run on the rayon pool; rows come back
//! sorted by `(mode, β)` regardless of completion order, so a sweep is
//! reproducible bit for bit once timing is left out.

use std::time::Instant;

use rayon::prelude::*;

use crate::blur::BlurKernel;
use crate::error::Result;
use crate::grid::ImageGrid;
use crate::metrics::snr;
use crate::simulate::{beta_grid, degrade, shepp_logan_modified, DegradationSpec};
use crate::solver::{Feasibility, Mode, SolverConfig};
use crate::tuner::{tune_lambda, TuneOptions};

/// Gaussian PSF width of the synthetic experiment, in pixels.
pub const DEFAULT_PSF_SIGMA: f64 = 1.17;

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub width: usize,
    pub height: usize,
    pub betas: Vec<f64>,
    pub modes: Vec<Mode>,
    pub psf_sigma: f64,
    pub base_seed: u64,
    /// Per-solve settings; `mode` and `lambda` are overridden per job.
    pub solver: SolverConfig,
    pub tune: TuneOptions,
    /// Record wall time per row. Off makes the CSV byte-reproducible.
    pub record_timing: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            width: 128,
            height: 128,
            betas: beta_grid(13, -2.0, 2.0),
            modes: vec![Mode::Tv, Mode::Tgv],
            psf_sigma: DEFAULT_PSF_SIGMA,
            base_seed: 1,
            solver: SolverConfig::default(),
            tune: TuneOptions::default(),
            record_timing: true,
        }
    }
}

/// One `(β, mode)` outcome. Fields that could not be computed are `NaN` or
/// `None`, and `error` says why.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub beta: f64,
    /// `SNR(z, β u₀)`.
    pub snr_in: f64,
    /// `SNR(û, β u₀)`.
    pub snr_out: f64,
    pub lambda_final: f64,
    pub kl_ratio_final: f64,
    /// Inner iterations summed over meta-iterations.
    pub iterations_total: Option<usize>,
    /// Seconds spent tuning and restoring.
    pub wall_time: Option<f64>,
    pub mode: Mode,
    pub seed: u64,
    pub error: Option<String>,
    pub lambda_trace: Vec<f64>,
    pub kl_ratio_trace: Vec<f64>,
    /// Worst constraint figures over the whole tuning run.
    pub feasibility: Option<Feasibility>,
    /// `min û / max û` of the final estimate.
    pub min_over_max: f64,
}

impl MetricsRow {
    fn failed(beta: f64, snr_in: f64, mode: Mode, seed: u64, error: String) -> Self {
        Self {
            beta,
            snr_in,
            snr_out: f64::NAN,
            lambda_final: f64::NAN,
            kl_ratio_final: f64::NAN,
            iterations_total: None,
            wall_time: None,
            mode,
            seed,
            error: Some(error),
            lambda_trace: Vec::new(),
            kl_ratio_trace: Vec::new(),
            feasibility: None,
            min_over_max: f64::NAN,
        }
    }
}

struct Observation {
    beta: f64,
    seed: u64,
    reference: ImageGrid,
    degraded: Result<(ImageGrid, BlurKernel)>,
}

/// Runs every `(β, mode)` job of `cfg`. Failures of single jobs end up in
/// the `error` field; only an invalid phantom size aborts the sweep.
pub fn run_experiment_sweep(cfg: &SweepConfig) -> Result<Vec<MetricsRow>> {
    let u0 = shepp_logan_modified(cfg.width, cfg.height)?;
    let observations: Vec<Observation> = cfg
        .betas
        .par_iter()
        .enumerate()
        .map(|(i, &beta)| {
            let seed = cfg.base_seed.wrapping_add(i as u64);
            let spec = DegradationSpec {
                padding: cfg.solver.padding,
                ..DegradationSpec::new(beta, cfg.psf_sigma, seed)
            };
            Observation {
                beta,
                seed,
                reference: u0.scale(beta),
                degraded: degrade(&u0, &spec),
            }
        })
        .collect();

    let jobs: Vec<(&Observation, Mode)> = observations
        .iter()
        .flat_map(|o| cfg.modes.iter().map(move |&m| (o, m)))
        .collect();
    let mut rows: Vec<MetricsRow> = jobs.par_iter().map(|&(obs, mode)| run_job(cfg, obs, mode)).collect();
    rows.sort_by(|a, b| a.mode.cmp(&b.mode).then(a.beta.total_cmp(&b.beta)));
    Ok(rows)
}

fn run_job(cfg: &SweepConfig, obs: &Observation, mode: Mode) -> MetricsRow {
    let (z, kernel) = match &obs.degraded {
        Ok(d) => d,
        Err(e) => return MetricsRow::failed(obs.beta, f64::NAN, mode, obs.seed, e.to_string()),
    };
    let snr_in = snr(z, &obs.reference).unwrap_or(f64::NAN);
    let solver = SolverConfig {
        mode,
        ..cfg.solver.clone()
    };
    let start = Instant::now();
    let tuned = match tune_lambda(z, kernel, &solver, &cfg.tune) {
        Ok(t) => t,
        Err(e) => return MetricsRow::failed(obs.beta, snr_in, mode, obs.seed, e.to_string()),
    };
    let elapsed = start.elapsed().as_secs_f64();
    let u = &tuned.final_result.u_hat;
    MetricsRow {
        beta: obs.beta,
        snr_in,
        snr_out: snr(u, &obs.reference).unwrap_or(f64::NAN),
        lambda_final: tuned.final_lambda(),
        kl_ratio_final: tuned.final_ratio(),
        iterations_total: Some(tuned.total_iterations()),
        wall_time: cfg.record_timing.then_some(elapsed),
        mode,
        seed: obs.seed,
        error: None,
        lambda_trace: tuned.lambda_trace,
        kl_ratio_trace: tuned.kl_ratio_trace,
        feasibility: Some(tuned.feasibility),
        min_over_max: u.min() / u.max(),
    }
}
