//! Exact coherence decay of the independent-boson model.
//!
//! With H = (ε/2)σz and Q = σz the bath only imprints a random phase on ρ₀₁,
//! so the second-order cumulant is exact:
//! |ρ₀₁(t)| = |ρ₀₁(0)| exp(−Γ(t)),
//! Γ(t) = (4/π) ∫₀^∞ J(ω) coth(βω/2) (1 − cos ωt)/ω² dω.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::config::{ModelConfig, RunConfig};
use super::run::{simulate, Pipeline};
use crate::bathcorr::{DissipatonModeSet, SpectralDensity};
use crate::quadrature::{self, QuadratureOptions};
use crate::{Error, Result};

/// ω coth(βω/2), finite at ω = 0.
fn thermal_weight(omega: f64, beta: f64) -> f64 {
    let y = 0.5 * beta * omega;
    let ratio = if y.abs() < 1e-4 { 1.0 + y * y / 3.0 } else { y / y.tanh() };
    2.0 * ratio / beta
}

/// (1 − cos ωt)/ω² written as (t²/2) sinc²(ωt/2).
fn window(omega: f64, t: f64) -> f64 {
    let x = 0.5 * omega * t;
    let s = if x.abs() < 1e-6 { 1.0 - x * x / 6.0 } else { x.sin() / x };
    0.5 * t * t * s * s
}

/// Γ(t) on the given times by adaptive quadrature.
pub fn dephasing_exponent(
    density: &SpectralDensity,
    beta: f64,
    times: &[f64],
    opts: &QuadratureOptions,
) -> Result<Vec<f64>> {
    density.validate()?;
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidParameter(format!("beta must be positive, got {beta}")));
    }
    if let Some(t) = times.iter().find(|t| !(t.is_finite() && **t >= 0.0)) {
        return Err(Error::InvalidParameter(format!("time {t} must be finite and non-negative")));
    }
    let scale = density.char_scale();
    let cutoff = 1e4 * scale;
    let mut breaks: Vec<f64> = [0.0, 0.5, 1.0, 2.0, 8.0, 32.0, 128.0, 1024.0]
        .iter()
        .map(|x| x * scale)
        .collect();
    breaks.push(cutoff);
    let weight = |w: f64| density.over_omega(w) * thermal_weight(w, beta);

    times
        .iter()
        .map(|&t| {
            if t == 0.0 {
                return Ok(0.0);
            }
            let body = quadrature::integrate_real(|w| weight(w) * window(w, t), &breaks, opts)?;
            // beyond the cutoff only the non-oscillating half of 1 − cos ωt
            // matters at the quadrature tolerance; it is mapped onto (0, 1]
            let tail = quadrature::integrate_real(
                |u| {
                    if u <= 0.0 {
                        return 0.0;
                    }
                    let w = cutoff / u;
                    weight(w) / (w * w) * cutoff / (u * u)
                },
                &[0.0, 0.5, 1.0],
                opts,
            )?;
            Ok(4.0 / std::f64::consts::PI * (body + tail))
        })
        .collect()
}

/// |ρ₀₁(t)| for a given |ρ₀₁(0)|.
pub fn pure_dephasing_coherence(
    density: &SpectralDensity,
    beta: f64,
    initial: f64,
    times: &[f64],
    opts: &QuadratureOptions,
) -> Result<Vec<f64>> {
    Ok(dephasing_exponent(density, beta, times, opts)?
        .into_iter()
        .map(|g| initial * (-g).exp())
        .collect())
}

/// Γ(t) from an exponential series, 4 Re Σ η_k (γ_k t − 1 + e^{−γ_k t})/γ_k².
/// Not an oracle: it inherits the truncation of the series.
pub fn dephasing_exponent_from_modes(modes: &DissipatonModeSet, t: f64) -> f64 {
    let sum: Complex64 = modes
        .modes
        .iter()
        .map(|m| {
            let gt = m.gamma * t;
            m.eta * (gt - 1.0 + (-gt).exp()) / (m.gamma * m.gamma)
        })
        .sum();
    4.0 * sum.re
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleComparison {
    pub times: Vec<f64>,
    pub deom: Vec<f64>,
    pub exact: Vec<f64>,
    pub max_deviation: f64,
    pub max_trace_error: f64,
    pub max_hermiticity_defect: f64,
}

/// Propagates a pure-dephasing configuration and compares |ρ₀₁(t)| at every
/// sample with the exact decay.
pub fn compare_pure_dephasing(config: &RunConfig) -> Result<OracleComparison> {
    if !matches!(config.model, ModelConfig::PureDephasing { .. }) {
        return Err(Error::Config("the dephasing oracle needs a pure_dephasing model".into()));
    }
    let p = Pipeline::new(config)?;
    let sim = simulate(&p)?;
    let times: Vec<f64> = sim.records.iter().map(|r| r.t).collect();
    let deom: Vec<f64> = sim.records.iter().map(|r| r.reduced[(0, 1)].norm()).collect();
    let exact = pure_dephasing_coherence(
        &config.bath.spectral_density,
        config.bath.beta,
        p.rho0[(0, 1)].norm(),
        &times,
        &QuadratureOptions::default(),
    )?;
    let max_deviation = deom.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok(OracleComparison {
        max_trace_error: sim.max_trace_error(),
        max_hermiticity_defect: sim.max_hermiticity_defect(),
        times,
        deom,
        exact,
        max_deviation,
    })
}

pub fn write_comparison_csv<W: std::io::Write>(c: &OracleComparison, mut w: W) -> Result<()> {
    use super::run::fmt17;
    writeln!(w, "t,abs_rho01_deom,abs_rho01_exact,abs_diff")?;
    for ((t, a), b) in c.times.iter().zip(&c.deom).zip(&c.exact) {
        writeln!(w, "{},{},{},{}", fmt17(*t), fmt17(*a), fmt17(*b), fmt17((a - b).abs()))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bathcorr::{decompose_correlation, fdt_correlation};

    fn bo() -> SpectralDensity {
        SpectralDensity::brownian(1.0, 1.0, 1.0)
    }

    #[test]
    fn frozen_values() {
        // independent scipy.integrate.quad evaluation of the same integral
        let expected = [
            (0.5, 1.0471732709841832),
            (1.0, 3.9508928197630873),
            (2.0, 13.19971882795955),
            (5.0, 41.41060650757555),
            (10.0, 80.61549489952098),
        ];
        let times: Vec<f64> = expected.iter().map(|e| e.0).collect();
        let g = dephasing_exponent(&bo(), 1.0, &times, &QuadratureOptions::default()).unwrap();
        for ((_, want), got) in expected.iter().zip(&g) {
            assert!((got - want).abs() < 1e-9 * want, "{got} vs {want}");
        }
    }

    #[test]
    fn no_bath_no_decay() {
        let j = SpectralDensity::brownian(0.0, 1.0, 1.0);
        let c = pure_dephasing_coherence(&j, 1.0, 0.5, &[0.0, 1.0, 7.0], &QuadratureOptions::default()).unwrap();
        assert!(c.iter().all(|x| *x == 0.5));
    }

    #[test]
    fn short_time_curvature() {
        // Γ(t) → 2 Re C(0) t²
        let c0 = fdt_correlation(&bo(), 1.0, &[0.0], &QuadratureOptions::default()).unwrap()[0].re;
        let t = 1e-3;
        let g = dephasing_exponent(&bo(), 1.0, &[t], &QuadratureOptions::default()).unwrap()[0];
        assert!((g / (2.0 * c0 * t * t) - 1.0).abs() < 1e-5);
    }

    #[test]
    fn series_converges_to_quadrature() {
        let modes = decompose_correlation(&bo(), 1.0, 2000).unwrap();
        let times = [0.3, 1.0, 4.0];
        let g = dephasing_exponent(&bo(), 1.0, &times, &QuadratureOptions::default()).unwrap();
        for (t, want) in times.iter().zip(&g) {
            let got = dephasing_exponent_from_modes(&modes, *t);
            assert!((got - want).abs() < 1e-5 * want.max(1.0), "t={t}: {got} vs {want}");
        }
    }

    #[test]
    fn drude_is_supported() {
        let j = SpectralDensity::drude(0.5, 2.0);
        let g = dephasing_exponent(&j, 1.0, &[1.0, 2.0], &QuadratureOptions::default()).unwrap();
        assert!(g[0] > 0.0 && g[1] > g[0]);
    }
}
