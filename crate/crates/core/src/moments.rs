//! Hybrid bath moments ⟨F̂ⁿ⟩ from the DDO hierarchy, the equivalent
//! mode-resolved x-moments, and cumulant statistics.
//!
//! The irreducible moment ⟨(Fⁿ)°⟩ is the multinomial sum of tr ρ_n over tier
//! n. Wick's theorem for the Gaussian bath gives
//! ⟨Fⁿ⟩ = Σ_m C(n,2m) (2m−1)!! ⟨F²⟩_B^m ⟨(F^{n−2m})°⟩.
//! The dimensionless x_k = f_k / ζ_k route gives the same numbers through
//! X̂_n = Σ_m c_nm ρ_{n−2m}.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::bathcorr::{bath_variance, DissipatonModeSet};
use crate::error::{Error, Result};
use crate::hierarchy::DdoStore;

/// Imaginary parts of physical moments above this (relative) level are errors.
pub const DEFAULT_IMAG_TOLERANCE: f64 = 1e-8;

fn factorial(n: u32) -> f64 {
    (1..=n).map(f64::from).product()
}

fn binomial(n: u32, k: u32) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, j| acc * f64::from(n - j) / f64::from(j + 1))
}

fn odd_double_factorial(m: u32) -> f64 {
    // (2m − 1)!!
    (1..=m).map(|j| f64::from(2 * j - 1)).product()
}

fn check_depth(store: &DdoStore, n: usize) -> Result<()> {
    let depth = store.hierarchy().depth();
    if n > depth {
        return Err(Error::InsufficientTruncation { requested: n, depth });
    }
    Ok(())
}

fn check_modes(store: &DdoStore, modes: &DissipatonModeSet) -> Result<()> {
    if store.hierarchy().modes() != modes.len() {
        return Err(Error::DimensionMismatch(format!(
            "store has {} modes, mode set has {}",
            store.hierarchy().modes(),
            modes.len()
        )));
    }
    Ok(())
}

fn multinomial(occ: &[u32]) -> f64 {
    let n: u32 = occ.iter().sum();
    occ.iter().fold(factorial(n), |acc, &k| acc / factorial(k))
}

/// ⟨(F̂ⁿ)°⟩ = Σ_{|n|=n} n!/Π n_k! · tr ρ_n.
pub fn irreducible_moment(store: &DdoStore, n: usize) -> Result<Complex64> {
    check_depth(store, n)?;
    let h = store.hierarchy();
    Ok(h.tier_range(n).map(|i| store.trace(i) * multinomial(h.occupations(i))).sum())
}

/// ⟨F̂ⁿ⟩ as a complex number; the imaginary part is numerical residue.
pub fn hybrid_moment_complex(store: &DdoStore, modes: &DissipatonModeSet, n: usize) -> Result<Complex64> {
    check_modes(store, modes)?;
    check_depth(store, n)?;
    let var = bath_variance(modes)?;
    let mut total = Complex64::new(0.0, 0.0);
    for m in 0..=(n / 2) {
        let w = binomial(n as u32, 2 * m as u32) * odd_double_factorial(m as u32) * var.powi(m as i32);
        total += irreducible_moment(store, n - 2 * m)? * w;
    }
    Ok(total)
}

fn real_part(z: Complex64, what: impl FnOnce() -> String, tol: f64) -> Result<f64> {
    if z.im.abs() > tol * z.re.abs().max(1.0) || !z.re.is_finite() {
        return Err(Error::ImaginaryResidue { what: what(), value: z.im });
    }
    Ok(z.re)
}

/// ⟨F̂ⁿ⟩ with the imaginary residue checked against `tol` and discarded.
pub fn hybrid_moment_checked(store: &DdoStore, modes: &DissipatonModeSet, n: usize, tol: f64) -> Result<f64> {
    let z = hybrid_moment_complex(store, modes, n)?;
    real_part(z, || format!("<F^{n}>"), tol)
}

pub fn hybrid_moment(store: &DdoStore, modes: &DissipatonModeSet, n: usize) -> Result<f64> {
    hybrid_moment_checked(store, modes, n, DEFAULT_IMAG_TOLERANCE)
}

/// Per-mode weight of ρ_{n−2m} in X̂_n (forward) or of X̂_{n−2m} in ρ_n (inverse).
fn mode_weight(zeta: Complex64, n: u32, m: u32, inverse: bool, k: usize) -> Result<Complex64> {
    let comb = factorial(n) / (factorial(m) * factorial(n - 2 * m)) * 0.5f64.powi(m as i32);
    if inverse {
        let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
        Ok(zeta.powu(n) * comb * sign)
    } else {
        let p = n - 2 * m;
        if p == 0 {
            return Ok(Complex64::new(comb, 0.0));
        }
        if zeta == Complex64::new(0.0, 0.0) {
            return Err(Error::ZeroCoefficient { mode: k });
        }
        Ok(comb / zeta.powu(p))
    }
}

fn transform(src: &DdoStore, modes: &DissipatonModeSet, inverse: bool) -> Result<DdoStore> {
    check_modes(src, modes)?;
    let h = src.hierarchy().clone();
    let k_modes = h.modes();
    let zetas: Vec<Complex64> = modes.modes.iter().map(|m| m.zeta).collect();
    let mut out = DdoStore::zeros(h.clone(), src.dim());
    let b = src.block_len();
    let mut lower = vec![0u32; k_modes];
    for i in 0..h.len() {
        let occ = h.occupations(i).to_vec();
        let mut m = vec![0u32; k_modes];
        loop {
            let mut w = Complex64::new(1.0, 0.0);
            for k in 0..k_modes {
                w *= mode_weight(zetas[k], occ[k], m[k], inverse, k)?;
                lower[k] = occ[k] - 2 * m[k];
            }
            let j = h.position_of(&lower).expect("lowered index lies inside the hierarchy");
            let (dst, from) = (i * b, j * b);
            for e in 0..b {
                let v = src.data()[from + e] * w;
                out.data_mut()[dst + e] += v;
            }
            // next m in mixed radix with m_k ≤ ⌊n_k/2⌋
            let mut k = 0;
            while k < k_modes {
                if m[k] < occ[k] / 2 {
                    m[k] += 1;
                    break;
                }
                m[k] = 0;
                k += 1;
            }
            if k == k_modes {
                break;
            }
        }
    }
    Ok(out)
}

/// X̂_n for every index of the hierarchy, in the same layout as the DDOs.
pub fn x_operators(store: &DdoStore, modes: &DissipatonModeSet) -> Result<DdoStore> {
    transform(store, modes, false)
}

/// Inverse of [`x_operators`]: ρ_n = Σ_m c̄_nm X̂_{n−2m}.
pub fn ddos_from_x_operators(x: &DdoStore, modes: &DissipatonModeSet) -> Result<DdoStore> {
    transform(x, modes, true)
}

/// ⟨x_n⟩ = tr X̂_n for the index at position `i`.
pub fn x_moment(x: &DdoStore, i: usize) -> Complex64 {
    x.trace(i)
}

/// ⟨Fⁿ⟩ = n! Σ_{|n|=n} Π_k ζ_k^{n_k}/n_k! ⟨x_n⟩.
pub fn hybrid_moment_via_x(x: &DdoStore, modes: &DissipatonModeSet, n: usize) -> Result<Complex64> {
    check_modes(x, modes)?;
    check_depth(x, n)?;
    let h = x.hierarchy();
    let mut total = Complex64::new(0.0, 0.0);
    for i in h.tier_range(n) {
        let occ = h.occupations(i);
        let mut w = Complex64::new(multinomial(occ), 0.0);
        for (k, &nk) in occ.iter().enumerate() {
            w *= modes.modes[k].zeta.powu(nk);
        }
        total += w * x.trace(i);
    }
    Ok(total)
}

/// Operator-valued moment X̂ for a single index.
pub fn x_operator(store: &DdoStore, modes: &DissipatonModeSet, i: usize) -> Result<DMatrix<Complex64>> {
    Ok(x_operators(store, modes)?.matrix(i))
}

/// Cumulants K_1..K_N from raw moments, `raw[j] = ⟨F^{j+1}⟩`.
pub fn cumulants(raw: &[f64]) -> Vec<f64> {
    let moment = |j: usize| if j == 0 { 1.0 } else { raw[j - 1] };
    let mut k: Vec<f64> = Vec::with_capacity(raw.len());
    for n in 1..=raw.len() {
        let mut v = moment(n);
        for m in 1..n {
            v -= binomial((n - 1) as u32, m as u32) * k[n - m - 1] * moment(m);
        }
        k.push(v);
    }
    k
}

#[derive(Clone, Debug, PartialEq)]
pub struct Statistics {
    pub raw: Vec<f64>,
    pub cumulants: Vec<f64>,
    pub sigma: Option<f64>,
    pub skewness: Option<f64>,
    pub kurtosis: Option<f64>,
}

impl Statistics {
    pub fn from_raw(raw: Vec<f64>) -> Self {
        let cumulants = cumulants(&raw);
        let k2 = cumulants.get(1).copied().filter(|v| *v > 0.0);
        let sigma = k2.map(f64::sqrt);
        let skewness = k2.and_then(|v| cumulants.get(2).map(|k3| k3 / v.powf(1.5)));
        let kurtosis = k2.and_then(|v| cumulants.get(3).map(|k4| k4 / (v * v)));
        Self {
            raw,
            cumulants,
            sigma,
            skewness,
            kurtosis,
        }
    }
}

/// Raw moments ⟨F¹⟩..⟨F^{n_max}⟩ and their cumulant statistics.
pub fn statistics(store: &DdoStore, modes: &DissipatonModeSet, n_max: usize, tol: f64) -> Result<Statistics> {
    let raw = (1..=n_max)
        .map(|n| hybrid_moment_checked(store, modes, n, tol))
        .collect::<Result<Vec<_>>>()?;
    Ok(Statistics::from_raw(raw))
}
