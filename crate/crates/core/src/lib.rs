//! Restoration of blurred, Poisson-noisy images (PET in particular) with a
//! second-order total generalized variation (TGV) prior.
//!
//! The estimate minimizes
//!
//! ```text
//! λ Σ (Ku − z·log Ku) + ‖∇u − w‖_{2,1} + α ‖ε(w)‖_{2,1}
//! ```
//!
//! over images `u ≥ 0` with `Σu = Σz` and auxiliary vector fields `w`, using
//! a Chambolle–Pock primal-dual iteration. `λ` can be chosen automatically
//! by the Poisson discrepancy principle. Plain TV (`w = 0`) is available for
//! comparison.
//!
//! ```
//! use pet_tgv::prelude::*;
//!
//! let truth = shepp_logan_modified(48, 48)?;
//! let (z, kernel) = degrade(&truth, &DegradationSpec::new(1.0, 1.17, 7))?;
//! let cfg = SolverConfig { lambda: 30.0, max_iters: 200, ..SolverConfig::default() };
//! let restored = cp_restore(&z, &kernel, &cfg)?;
//! assert!(snr(&restored.u_hat, &truth)? > snr(&z, &truth)?);
//! # Ok::<(), pet_tgv::Error>(())
//! ```
//!
//! Module map: [`grid`] (images, tensor fields, norms), [`diff`] (finite
//! differences), [`blur`] (PSF convolution), [`prox`] (proximal maps),
//! [`solver`], [`tuner`] (automatic `λ`), [`simulate`] (phantom and noise),
//! [`sweep`], [`metrics`], [`io`], [`config`].

// `!(x > 0.0)` style checks are deliberate: they reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod blur;
pub mod config;
pub mod diff;
pub mod error;
pub mod grid;
pub mod io;
pub mod metrics;
pub mod opnorm;
pub mod prox;
pub mod simulate;
pub mod solver;
pub mod sweep;
pub mod tuner;

pub use error::{Error, Result};

/// The types and functions most programs need.
pub mod prelude {
    pub use crate::blur::{BlurKernel, Padding};
    pub use crate::grid::{ImageGrid, TensorField};
    pub use crate::metrics::snr;
    pub use crate::simulate::{degrade, shepp_logan_modified, DegradationSpec};
    pub use crate::solver::{cp_restore, Mode, Restorer, SolverConfig};
    pub use crate::tuner::{tune_lambda, TuneOptions};
}

// The guide's chapters, compiled and run as doctests.
#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../README.md")]
    struct Readme;
    #[doc = include_str!("../../../book/src/introduction.md")]
    struct Introduction;
    #[doc = include_str!("../../../book/src/operators.md")]
    struct Operators;
    #[doc = include_str!("../../../book/src/simulation.md")]
    struct Simulation;
    #[doc = include_str!("../../../book/src/restoration.md")]
    struct Restoration;
    #[doc = include_str!("../../../book/src/tuning.md")]
    struct Tuning;
    #[doc = include_str!("../../../book/src/experiments.md")]
    struct Experiments;
    #[doc = include_str!("../../../book/src/cli.md")]
    struct Cli;
}
