//! Configuration, built-in models, oracles and the run/sweep pipeline behind
//! the `dqme` command-line tool.

pub mod config;
pub mod models;
pub mod oracle;
pub mod run;
pub mod sweep;

use serde::{Deserialize, Serialize};

use crate::bathcorr::{self, DissipatonModeSet, ModeSetDocument};
use crate::quadrature::QuadratureOptions;
use crate::{Error, Result};
pub use config::RunConfig;

/// Quadrature settings for the reconstruction check; the check itself is at
/// the 1e-3 level, so the oscillatory tail need not be resolved to 1e-13.
pub const CHECK_QUADRATURE: QuadratureOptions = QuadratureOptions {
    abs_tol: 1e-9,
    rel_tol: 1e-7,
    max_intervals: 50_000,
};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_INCONCLUSIVE: i32 = 4;

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        Error::Inconclusive(_) => EXIT_INCONCLUSIVE,
        _ => EXIT_NUMERICAL,
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DecompositionReport {
    pub modes: ModeSetDocument,
    pub bath_variance: Option<f64>,
    /// Max relative deviation from the quadrature correlation on [0, 5β];
    /// absent when no quadrature oracle exists for the spectral density.
    pub reconstruction_error: Option<f64>,
}

pub fn decompose(config: &RunConfig) -> Result<(DissipatonModeSet, DecompositionReport)> {
    let b = &config.bath;
    let modes = bathcorr::decompose_correlation(&b.spectral_density, b.beta, b.n_matsubara)
        .map_err(|e| Error::Config(e.to_string()))?;
    let reconstruction_error = match bathcorr::reconstruction_error(
        &b.spectral_density,
        &modes,
        5.0 * b.beta,
        201,
        &CHECK_QUADRATURE,
    ) {
        Ok(v) => Some(v),
        Err(Error::Unsupported(_)) => None,
        Err(e) => return Err(e),
    };
    let report = DecompositionReport {
        modes: ModeSetDocument::from(&modes),
        bath_variance: bathcorr::bath_variance(&modes).ok(),
        reconstruction_error,
    };
    Ok((modes, report))
}
