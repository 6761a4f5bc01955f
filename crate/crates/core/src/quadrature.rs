//! Globally adaptive Gauss–Kronrod (7/15) integration of complex-valued
//! integrands on finite intervals.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use num_complex::Complex64;

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];

// Gauss weights for XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

#[derive(Clone, Copy, Debug)]
pub struct QuadratureOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_intervals: usize,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        Self {
            abs_tol: 1e-13,
            rel_tol: 1e-11,
            max_intervals: 50_000,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct QuadratureResult {
    pub value: Complex64,
    pub error: f64,
    pub evaluations: usize,
}

struct Segment {
    a: f64,
    b: f64,
    value: Complex64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn kronrod<F: Fn(f64) -> Complex64>(f: &F, a: f64, b: f64) -> (Complex64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kron = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = half * XGK[j];
        let pair = f(center - dx) + f(center + dx);
        kron += pair * WGK[j];
        if j % 2 == 1 {
            gauss += pair * WG[j / 2];
        }
    }
    let value = kron * half;
    let error = ((kron - gauss) * half).norm();
    (value, error)
}

/// Integrates `f` over `[a, b]`, splitting first at the supplied interior
/// breakpoints.
pub fn integrate<F>(f: F, breakpoints: &[f64], opts: &QuadratureOptions) -> Result<QuadratureResult>
where
    F: Fn(f64) -> Complex64,
{
    if breakpoints.len() < 2 {
        return Err(Error::InvalidParameter(
            "quadrature needs at least two breakpoints".into(),
        ));
    }
    if breakpoints.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("quadrature breakpoint".into()));
    }
    let mut heap = BinaryHeap::new();
    let mut total = Complex64::new(0.0, 0.0);
    let mut total_err = 0.0;
    let mut evaluations = 0;
    for w in breakpoints.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b <= a {
            continue;
        }
        let (value, error) = kronrod(&f, a, b);
        evaluations += 15;
        total += value;
        total_err += error;
        heap.push(Segment { a, b, value, error });
    }

    loop {
        let target = opts.abs_tol.max(opts.rel_tol * total.norm());
        if total_err <= target {
            break;
        }
        if heap.len() >= opts.max_intervals {
            return Err(Error::Quadrature {
                achieved: total_err,
                requested: target,
            });
        }
        let Some(worst) = heap.pop() else { break };
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // interval can no longer be split in floating point
            heap.push(worst);
            let achieved = total_err;
            return Err(Error::Quadrature {
                achieved,
                requested: target,
            });
        }
        let (v1, e1) = kronrod(&f, worst.a, mid);
        let (v2, e2) = kronrod(&f, mid, worst.b);
        evaluations += 30;
        total += v1 + v2 - worst.value;
        total_err += e1 + e2 - worst.error;
        heap.push(Segment { a: worst.a, b: mid, value: v1, error: e1 });
        heap.push(Segment { a: mid, b: worst.b, value: v2, error: e2 });
    }
    // re-sum to shed accumulated cancellation from the running updates
    let mut value = Complex64::new(0.0, 0.0);
    let mut error = 0.0;
    for s in heap.iter() {
        value += s.value;
        error += s.error;
    }
    Ok(QuadratureResult {
        value,
        error,
        evaluations,
    })
}

/// Real-valued convenience wrapper.
pub fn integrate_real<F>(f: F, breakpoints: &[f64], opts: &QuadratureOptions) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    integrate(|x| Complex64::new(f(x), 0.0), breakpoints, opts).map(|r| r.value.re)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_is_exact() {
        let r = integrate_real(|x| x.powi(5) - 3.0 * x * x, &[-1.0, 2.0], &QuadratureOptions::default()).unwrap();
        // ∫ x^5 - 3x^2 from -1 to 2 = (64 - 1)/6 - (8 + 1)
        assert!((r - (63.0 / 6.0 - 9.0)).abs() < 1e-13);
    }

    #[test]
    fn oscillatory_gaussian() {
        let t = 3.0;
        let r = integrate(
            |x| Complex64::new(0.0, -x * t).exp() * (-x * x / 2.0).exp(),
            &[-12.0, 0.0, 12.0],
            &QuadratureOptions::default(),
        )
        .unwrap();
        let exact = (2.0 * std::f64::consts::PI).sqrt() * (-t * t / 2.0).exp();
        assert!((r.value.re - exact).abs() < 1e-12);
        assert!(r.value.im.abs() < 1e-12);
    }

    #[test]
    fn reports_non_convergence() {
        let opts = QuadratureOptions {
            abs_tol: 1e-15,
            rel_tol: 0.0,
            max_intervals: 4,
        };
        let err = integrate_real(|x| 1.0 / x.sqrt(), &[0.0, 1.0], &opts).unwrap_err();
        assert!(matches!(err, Error::Quadrature { .. }));
    }
}
