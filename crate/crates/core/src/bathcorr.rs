//! Bath spectral densities, the fluctuation–dissipation correlation function,
//! and its decomposition into exponential dissipaton modes.
//!
//! The correlation function is
//!
//! ```text
//! C(t) = (1/π) ∫ dω e^{-iωt} J(ω) / (1 - e^{-βω})  ≈  Σ_k η_k e^{-γ_k t}
//! ```
//!
//! and every mode k has a conjugate partner k̄ with γ_k̄ = γ_k*. The
//! coefficients ζ_k and ξ_k map the dissipaton operators onto real
//! Brownian-like variables.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{self, QuadratureOptions};

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Relative tolerance used when matching γ_k̄ = γ_k*.
pub const DEFAULT_PAIRING_TOLERANCE: f64 = 1e-10;
/// Default relative tolerance for exponential reconstruction of C(t).
pub const DEFAULT_RECONSTRUCTION_TOLERANCE: f64 = 1e-3;
/// Imaginary residue allowed on Σ_k η_k.
pub const VARIANCE_IMAG_TOLERANCE: f64 = 1e-10;

// Below |βω| < this the Bose factor ω/(1 - e^{-βω}) is taken from its series.
const BOSE_SERIES_CUTOFF: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum SpectralDensity {
    /// J(ω) = 2λω0²ζω / ((ω² − ω0²)² + ω²ζ²)
    BrownianOscillator {
        lambda: f64,
        omega0: f64,
        damping: f64,
    },
    /// J(ω) = 2λγω / (ω² + γ²)
    DrudeLorentz { lambda: f64, cutoff: f64 },
}

impl SpectralDensity {
    pub fn brownian(lambda: f64, omega0: f64, damping: f64) -> Self {
        Self::BrownianOscillator {
            lambda,
            omega0,
            damping,
        }
    }

    pub fn drude(lambda: f64, cutoff: f64) -> Self {
        Self::DrudeLorentz { lambda, cutoff }
    }

    pub fn reorganization_energy(&self) -> f64 {
        match *self {
            Self::BrownianOscillator { lambda, .. } | Self::DrudeLorentz { lambda, .. } => lambda,
        }
    }

    /// Returns a copy with every energy scaled by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        match *self {
            Self::BrownianOscillator {
                lambda,
                omega0,
                damping,
            } => Self::brownian(lambda * c, omega0 * c, damping * c),
            Self::DrudeLorentz { lambda, cutoff } => Self::drude(lambda * c, cutoff * c),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::BrownianOscillator {
                lambda,
                omega0,
                damping,
            } => {
                for (name, v) in [("lambda", lambda), ("omega0", omega0), ("damping", damping)] {
                    if !v.is_finite() {
                        return Err(Error::NonFinite(format!("Brownian oscillator {name}")));
                    }
                }
                if lambda < 0.0 || omega0 <= 0.0 || damping <= 0.0 {
                    return Err(Error::InvalidParameter(format!(
                        "Brownian oscillator needs lambda >= 0, omega0 > 0, damping > 0 (got {lambda}, {omega0}, {damping})"
                    )));
                }
            }
            Self::DrudeLorentz { lambda, cutoff } => {
                if !lambda.is_finite() || !cutoff.is_finite() {
                    return Err(Error::NonFinite("Drude–Lorentz parameter".into()));
                }
                if lambda < 0.0 || cutoff <= 0.0 {
                    return Err(Error::InvalidParameter(format!(
                        "Drude–Lorentz needs lambda >= 0 and cutoff > 0 (got {lambda}, {cutoff})"
                    )));
                }
            }
        }
        Ok(())
    }

    /// J(ω) for real ω.
    pub fn evaluate(&self, omega: f64) -> Result<f64> {
        if !omega.is_finite() {
            return Err(Error::NonFinite(format!("frequency {omega}")));
        }
        Ok(omega * self.over_omega(omega))
    }

    /// J(ω)/ω, which is smooth and even.
    pub fn over_omega(&self, omega: f64) -> f64 {
        let w2 = omega * omega;
        match *self {
            Self::BrownianOscillator {
                lambda,
                omega0,
                damping,
            } => {
                let d = w2 - omega0 * omega0;
                2.0 * lambda * omega0 * omega0 * damping / (d * d + w2 * damping * damping)
            }
            Self::DrudeLorentz { lambda, cutoff } => 2.0 * lambda * cutoff / (w2 + cutoff * cutoff),
        }
    }

    /// Analytic continuation of J to complex frequency.
    pub fn evaluate_complex(&self, w: Complex64) -> Complex64 {
        let w2 = w * w;
        match *self {
            Self::BrownianOscillator {
                lambda,
                omega0,
                damping,
            } => {
                let d = w2 - omega0 * omega0;
                2.0 * lambda * omega0 * omega0 * damping * w / (d * d + w2 * damping * damping)
            }
            Self::DrudeLorentz { lambda, cutoff } => 2.0 * lambda * cutoff * w / (w2 + cutoff * cutoff),
        }
    }

    /// Poles of J in the lower half plane together with their residues.
    fn lower_poles(&self) -> Result<Vec<(Complex64, Complex64)>> {
        match *self {
            Self::BrownianOscillator {
                lambda,
                omega0,
                damping,
            } => {
                if omega0 <= damping / 2.0 {
                    return Err(Error::NotUnderdamped { omega0, damping });
                }
                let big_omega = (omega0 * omega0 - damping * damping / 4.0).sqrt();
                let all = [
                    Complex64::new(-big_omega, -damping / 2.0),
                    Complex64::new(big_omega, -damping / 2.0),
                    Complex64::new(-big_omega, damping / 2.0),
                    Complex64::new(big_omega, damping / 2.0),
                ];
                let amp = 2.0 * lambda * omega0 * omega0 * damping;
                Ok(all[..2]
                    .iter()
                    .map(|&p| {
                        let denom: Complex64 = all.iter().filter(|&&q| q != p).map(|&q| p - q).product();
                        (p, amp * p / denom)
                    })
                    .collect())
            }
            Self::DrudeLorentz { lambda, cutoff } => {
                Ok(vec![(Complex64::new(0.0, -cutoff), Complex64::new(lambda * cutoff, 0.0))])
            }
        }
    }

    pub(crate) fn char_scale(&self) -> f64 {
        match *self {
            Self::BrownianOscillator { omega0, damping, .. } => omega0.max(damping),
            Self::DrudeLorentz { cutoff, .. } => cutoff,
        }
    }
}

/// ω / (1 − e^{−βω}), with the removable point at ω = 0.
fn bose_weight(omega: f64, beta: f64) -> f64 {
    let x = beta * omega;
    if x.abs() < BOSE_SERIES_CUTOFF {
        (1.0 + x / 2.0 + x * x / 12.0) / beta
    } else {
        omega / -(-x).exp_m1()
    }
}

/// Evaluates C(t) on the given times by adaptive quadrature of the
/// fluctuation–dissipation integral.
///
/// Only the Brownian oscillator is supported: the Drude–Lorentz C(0) diverges
/// logarithmically, so there is nothing finite to compare against.
pub fn fdt_correlation(
    density: &SpectralDensity,
    beta: f64,
    times: &[f64],
    opts: &QuadratureOptions,
) -> Result<Vec<Complex64>> {
    density.validate()?;
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidParameter(format!("beta must be positive, got {beta}")));
    }
    let SpectralDensity::BrownianOscillator { omega0, .. } = *density else {
        return Err(Error::Unsupported(
            "quadrature oracle needs a spectral density decaying faster than 1/ω".into(),
        ));
    };
    if let Some(t) = times.iter().find(|t| !(t.is_finite() && **t >= 0.0)) {
        return Err(Error::InvalidParameter(format!("time {t} must be finite and non-negative")));
    }
    let scale = density.char_scale();
    let cutoff = 1e4 * scale;
    let neg_cutoff = cutoff.min(60.0 / beta + 10.0 * scale);
    let weight = |w: f64| density.over_omega(w) * bose_weight(w, beta);

    times
        .iter()
        .map(|&t| {
            let phase = |w: f64| Complex64::new(0.0, -w * t).exp();
            let mut pos_breaks = vec![0.0, 0.5 * omega0, omega0, 2.0 * omega0, 8.0 * omega0];
            pos_breaks.retain(|&x| x < cutoff);
            pos_breaks.push(cutoff);
            let mut neg_breaks: Vec<f64> = pos_breaks.iter().map(|x| -x).filter(|&x| x > -neg_cutoff).collect();
            neg_breaks.push(-neg_cutoff);
            neg_breaks.reverse();

            let body = quadrature::integrate(|w| phase(w) * weight(w), &pos_breaks, opts)?.value;
            let negative = quadrature::integrate(|w| phase(w) * weight(w), &neg_breaks, opts)?.value;
            // [cutoff, ∞) mapped onto (0, 1] through ω = cutoff / u; the
            // t = 0 integral bounds the oscillatory one, so its size sets a
            // sensible absolute tolerance for the latter
            let mapped = |u: f64, t: f64| {
                if u <= 0.0 {
                    return Complex64::new(0.0, 0.0);
                }
                let w = cutoff / u;
                Complex64::new(0.0, -w * t).exp() * weight(w) * (cutoff / (u * u))
            };
            let bound = quadrature::integrate(|u| mapped(u, 0.0), &[0.0, 0.5, 1.0], opts)?.value;
            let tail = if t == 0.0 {
                bound
            } else {
                let tail_opts = QuadratureOptions {
                    abs_tol: opts.abs_tol.max(1e-3 * bound.norm()),
                    ..*opts
                };
                quadrature::integrate(|u| mapped(u, t), &[0.0, 0.5, 1.0], &tail_opts)?.value
            };
            Ok((body + negative + tail) / PI)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DissipatonMode {
    pub eta: Complex64,
    pub gamma: Complex64,
    pub bar_index: usize,
    pub zeta: Complex64,
    pub xi: Complex64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DissipatonModeSet {
    pub modes: Vec<DissipatonMode>,
    pub beta: f64,
}

/// Finds k̄ for every mode by matching γ_k̄ = γ_k* within `tolerance`
/// (relative to |γ_k|).
pub fn pair_indices(gammas: &[Complex64], tolerance: f64) -> Result<Vec<usize>> {
    let mut bar = Vec::with_capacity(gammas.len());
    for (k, g) in gammas.iter().enumerate() {
        let target = g.conj();
        let tol = tolerance * g.norm().max(f64::MIN_POSITIVE);
        let candidates: Vec<usize> = gammas
            .iter()
            .enumerate()
            .filter(|(_, h)| (**h - target).norm() <= tol)
            .map(|(j, _)| j)
            .collect();
        match candidates.as_slice() {
            [j] => bar.push(*j),
            [] => {
                return Err(Error::Pairing(format!(
                    "missing conjugate partner for mode {k} with gamma = {g}"
                )))
            }
            many => {
                let list: Vec<String> = many.iter().map(|j| format!("{j}: {}", gammas[*j])).collect();
                return Err(Error::Pairing(format!(
                    "ambiguous conjugate partner for mode {k} with gamma = {g}; candidates {}",
                    list.join(", ")
                )));
            }
        }
    }
    for (k, &j) in bar.iter().enumerate() {
        if bar[j] != k {
            return Err(Error::Pairing(format!("pairing is not an involution at mode {k}")));
        }
    }
    Ok(bar)
}

/// ζ_k = √((η_k + η_k̄*)/2) on the principal branch and
/// ξ_k = (η_k − η_k̄*)/(2iζ_k).
pub fn dissipaton_coefficients(etas: &[Complex64], bar: &[usize]) -> Result<Vec<(Complex64, Complex64)>> {
    if etas.len() != bar.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} amplitudes but {} pairing entries",
            etas.len(),
            bar.len()
        )));
    }
    let mut out: Vec<(Complex64, Complex64)> = Vec::with_capacity(etas.len());
    for (k, &eta) in etas.iter().enumerate() {
        // the partner's coefficients are exact conjugates; reuse them so the
        // branch of the square root cannot flip between the two
        if bar[k] < k {
            let (z, x) = out[bar[k]];
            out.push((z.conj(), x.conj()));
            continue;
        }
        out.push({
            let partner = etas[bar[k]].conj();
            let zeta = ((eta + partner) / 2.0).sqrt();
            let diff = eta - partner;
            if zeta == Complex64::new(0.0, 0.0) {
                if diff == Complex64::new(0.0, 0.0) {
                    out.push((zeta, Complex64::new(0.0, 0.0)));
                    continue;
                }
                return Err(Error::DegenerateMode { mode: k });
            }
            (zeta, diff / (2.0 * I * zeta))
        });
    }
    Ok(out)
}

impl DissipatonModeSet {
    /// Builds a mode set from raw (η_k, γ_k) pairs.
    pub fn from_exponents(beta: f64, exponents: &[(Complex64, Complex64)]) -> Result<Self> {
        Self::from_exponents_with_tolerance(beta, exponents, DEFAULT_PAIRING_TOLERANCE)
    }

    pub fn from_exponents_with_tolerance(
        beta: f64,
        exponents: &[(Complex64, Complex64)],
        pairing_tolerance: f64,
    ) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::InvalidParameter(format!("beta must be positive, got {beta}")));
        }
        for (k, (eta, gamma)) in exponents.iter().enumerate() {
            if !(eta.re.is_finite() && eta.im.is_finite() && gamma.re.is_finite() && gamma.im.is_finite()) {
                return Err(Error::NonFinite(format!("mode {k}")));
            }
            if gamma.re <= 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "mode {k} has non-decaying exponent {gamma}"
                )));
            }
        }
        let gammas: Vec<Complex64> = exponents.iter().map(|e| e.1).collect();
        let etas: Vec<Complex64> = exponents.iter().map(|e| e.0).collect();
        let bar = pair_indices(&gammas, pairing_tolerance)?;
        let coeffs = dissipaton_coefficients(&etas, &bar)?;
        let modes = exponents
            .iter()
            .zip(bar.iter().zip(coeffs))
            .map(|(&(eta, gamma), (&bar_index, (zeta, xi)))| DissipatonMode {
                eta,
                gamma,
                bar_index,
                zeta,
                xi,
            })
            .collect();
        Ok(Self { modes, beta })
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn bar_map(&self) -> Vec<usize> {
        self.modes.iter().map(|m| m.bar_index).collect()
    }

    pub fn max_decay_rate(&self) -> f64 {
        self.modes.iter().map(|m| m.gamma.re).fold(0.0, f64::max)
    }

    /// Σ_k η_k e^{−γ_k t}.
    pub fn correlation(&self, t: f64) -> Complex64 {
        self.modes.iter().map(|m| m.eta * (-m.gamma * t).exp()).sum()
    }

    /// Σ_k η_k̄* e^{−γ_k t}, the time-reversed correlation.
    pub fn reversed_correlation(&self, t: f64) -> Complex64 {
        self.modes
            .iter()
            .map(|m| self.modes[m.bar_index].eta.conj() * (-m.gamma * t).exp())
            .sum()
    }

    /// Rescales all energies by `c` (β by 1/c).
    pub fn scaled(&self, c: f64) -> Result<Self> {
        let ex: Vec<_> = self.modes.iter().map(|m| (m.eta * c * c, m.gamma * c)).collect();
        Self::from_exponents(self.beta / c, &ex)
    }
}

/// Exponential decomposition by the poles of J plus `n_matsubara` Matsubara
/// terms. The first modes are the poles of J (for the Brownian oscillator
/// γ = ζ/2 ∓ iΩ), followed by ν_n = 2πn/β.
pub fn decompose_correlation(density: &SpectralDensity, beta: f64, n_matsubara: usize) -> Result<DissipatonModeSet> {
    density.validate()?;
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidParameter(format!("beta must be positive, got {beta}")));
    }
    let mut exponents = Vec::with_capacity(n_matsubara + 2);
    let poles = density.lower_poles()?;
    for &(p, residue) in &poles {
        // closing in the lower half plane: C(t) = −2i Σ Res, e^{−iωt} = e^{−γt}
        let eta = -2.0 * I * residue / (1.0 - (-beta * p).exp());
        exponents.push((eta, I * p));
    }
    for n in 1..=n_matsubara {
        let nu = 2.0 * PI * n as f64 / beta;
        if poles.iter().any(|(p, _)| (I * p - nu).norm() <= 1e-10 * nu) {
            return Err(Error::InvalidParameter(format!(
                "Matsubara frequency {nu} coincides with a spectral-density pole"
            )));
        }
        let j = density.evaluate_complex(Complex64::new(0.0, -nu));
        exponents.push((-2.0 * I * j / beta, Complex64::new(nu, 0.0)));
    }
    DissipatonModeSet::from_exponents(beta, &exponents)
}

/// Maximum of |Σ η_k e^{−γ_k t} − C_quad(t)| / |C_quad(0)| over `n_points`
/// evenly spaced times in [0, window].
pub fn reconstruction_error(
    density: &SpectralDensity,
    modes: &DissipatonModeSet,
    window: f64,
    n_points: usize,
    opts: &QuadratureOptions,
) -> Result<f64> {
    let n_points = n_points.max(2);
    let times: Vec<f64> = (0..n_points).map(|i| window * i as f64 / (n_points - 1) as f64).collect();
    let reference = fdt_correlation(density, modes.beta, &times, opts)?;
    let scale = reference[0].norm();
    Ok(times
        .iter()
        .zip(&reference)
        .map(|(&t, c)| (modes.correlation(t) - c).norm() / scale)
        .fold(0.0, f64::max))
}

/// Decomposes and verifies the reconstruction over [0, 5β] against the
/// quadrature oracle.
pub fn decompose_checked(
    density: &SpectralDensity,
    beta: f64,
    n_matsubara: usize,
    tolerance: f64,
) -> Result<DissipatonModeSet> {
    let modes = decompose_correlation(density, beta, n_matsubara)?;
    if density.reorganization_energy() == 0.0 {
        return Ok(modes);
    }
    let achieved = reconstruction_error(density, &modes, 5.0 * beta, 201, &QuadratureOptions::default())?;
    if achieved > tolerance {
        return Err(Error::ReconstructionTolerance { achieved, tolerance });
    }
    Ok(modes)
}

/// ⟨F²⟩_B = Σ_k η_k, checked to be real and equal to Σ_k ζ_k².
pub fn bath_variance(modes: &DissipatonModeSet) -> Result<f64> {
    let sum: Complex64 = modes.modes.iter().map(|m| m.eta).sum();
    let zeta_sq: Complex64 = modes.modes.iter().map(|m| m.zeta * m.zeta).sum();
    let scale = sum.norm().max(1.0);
    if sum.im.abs() > VARIANCE_IMAG_TOLERANCE * scale {
        return Err(Error::ImaginaryResidue {
            what: "bath variance Σ η_k".into(),
            value: sum.im,
        });
    }
    if (zeta_sq - sum).norm() > VARIANCE_IMAG_TOLERANCE * scale {
        return Err(Error::ImaginaryResidue {
            what: "Σ ζ_k² − Σ η_k".into(),
            value: (zeta_sq - sum).norm(),
        });
    }
    Ok(sum.re)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModeRecord {
    pub eta_re: f64,
    pub eta_im: f64,
    pub gamma_re: f64,
    pub gamma_im: f64,
    pub bar_index: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModeSetDocument {
    pub beta: f64,
    pub modes: Vec<ModeRecord>,
}

impl From<&DissipatonModeSet> for ModeSetDocument {
    fn from(set: &DissipatonModeSet) -> Self {
        Self {
            beta: set.beta,
            modes: set
                .modes
                .iter()
                .map(|m| ModeRecord {
                    eta_re: m.eta.re,
                    eta_im: m.eta.im,
                    gamma_re: m.gamma.re,
                    gamma_im: m.gamma.im,
                    bar_index: m.bar_index,
                })
                .collect(),
        }
    }
}

impl TryFrom<&ModeSetDocument> for DissipatonModeSet {
    type Error = Error;

    fn try_from(doc: &ModeSetDocument) -> Result<Self> {
        let ex: Vec<_> = doc
            .modes
            .iter()
            .map(|r| (Complex64::new(r.eta_re, r.eta_im), Complex64::new(r.gamma_re, r.gamma_im)))
            .collect();
        let set = DissipatonModeSet::from_exponents(doc.beta, &ex)?;
        for (k, (m, r)) in set.modes.iter().zip(&doc.modes).enumerate() {
            if m.bar_index != r.bar_index {
                return Err(Error::Pairing(format!(
                    "document pairs mode {k} with {} but exponents pair it with {}",
                    r.bar_index, m.bar_index
                )));
            }
        }
        Ok(set)
    }
}

impl DissipatonModeSet {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ModeSetDocument::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModeSetDocument = serde_json::from_str(text)?;
        Self::try_from(&doc)
    }
}
