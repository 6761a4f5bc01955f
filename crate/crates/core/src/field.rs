//! Phase-space picture of the hierarchy: the dissipaton distribution
//! P(x) = tr_S ρ̂(x) with ρ̂(x) = Σ_n ρ_n Π_k φ_{n_k}(x_k), its probability
//! current, the Smoluchowski balance and the steady-state moment relations.
//!
//! Basis functions are φ_n(x) = g(x) He_n(x) / (ζⁿ n!) with g the standard
//! normal density and He_n the probabilists' Hermite polynomials, so that
//! ∫ x^m φ_n dx reproduces the x-moment coefficients.

use std::io::Write;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::bathcorr::DissipatonModeSet;
use crate::error::{Error, Result};
use crate::hierarchy::{DdoStore, MultiIndex};
use crate::moments::x_operators;
use crate::propagator::SystemModel;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

pub const DEFAULT_HALF_WIDTH: f64 = 8.0;
pub const DEFAULT_POINTS: usize = 401;
/// Relative imaginary residue accepted by [`FieldSlice::real_density`].
pub const REALNESS_TOLERANCE: f64 = 1e-9;

pub fn uniform_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    let h = (hi - lo) / (points - 1) as f64;
    (0..points).map(|i| lo + h * i as f64).collect()
}

pub fn default_grid() -> Vec<f64> {
    uniform_grid(-DEFAULT_HALF_WIDTH, DEFAULT_HALF_WIDTH, DEFAULT_POINTS)
}

/// φ̃_0..φ̃_{n_max} at x, where φ̃_n = g(x) He_n(x) / n!.
///
/// Uses φ̃_{n+1} = (x φ̃_n − φ̃_{n−1}) / (n+1), which follows from the Hermite
/// recurrence and never overflows.
pub fn scaled_basis(n_max: usize, x: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n_max + 1);
    out.push((-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt());
    if n_max >= 1 {
        out.push(x * out[0]);
    }
    for n in 1..n_max {
        let next = (x * out[n] - out[n - 1]) / (n + 1) as f64;
        out.push(next);
    }
    out
}

pub fn basis_function(n: usize, x: f64, zeta: Complex64) -> Complex64 {
    scaled_basis(n, x)[n] / zeta.powu(n as u32)
}

/// He_0..He_{n_max} at x.
pub fn hermite_he(n_max: usize, x: f64) -> Vec<f64> {
    let mut out = vec![1.0];
    if n_max >= 1 {
        out.push(x);
    }
    for n in 1..n_max {
        out.push(x * out[n] - n as f64 * out[n - 1]);
    }
    out
}

fn trace_product(a: &[Complex64], b: &[Complex64], d: usize) -> Complex64 {
    // tr(A B) for row-major blocks
    let mut t = ZERO;
    for r in 0..d {
        for c in 0..d {
            t += a[r * d + c] * b[c * d + r];
        }
    }
    t
}

fn row_major(m: &DMatrix<Complex64>) -> Vec<Complex64> {
    let mut v = Vec::with_capacity(m.len());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            v.push(m[(r, c)]);
        }
    }
    v
}

fn validate_dims(modes: &DissipatonModeSet, dims: &[usize], axes: &[Vec<f64>]) -> Result<()> {
    if dims.is_empty() || dims.len() > 2 {
        return Err(Error::Field(format!("1 or 2 displayed dimensions supported, got {}", dims.len())));
    }
    if dims.len() == 2 && dims[0] == dims[1] {
        return Err(Error::Field("displayed dimensions must be distinct".into()));
    }
    if axes.len() != dims.len() {
        return Err(Error::Field(format!("{} axes given for {} dimensions", axes.len(), dims.len())));
    }
    for &k in dims {
        if k >= modes.len() {
            return Err(Error::Field(format!("mode {k} out of range (K = {})", modes.len())));
        }
        let bar = modes.modes[k].bar_index;
        if !dims.contains(&bar) {
            return Err(Error::Field(format!(
                "mode {k} is paired with mode {bar}; both must be displayed together"
            )));
        }
    }
    for axis in axes {
        if axis.len() < 2 || axis.iter().any(|x| !x.is_finite()) || axis.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Field("grid axes must be finite, increasing, with at least 2 points".into()));
        }
    }
    Ok(())
}

/// Field samples on a 1- or 2-dimensional grid, stored row-major with the
/// first displayed dimension varying slowest.
#[derive(Clone, Debug)]
pub struct FieldSlice {
    pub dims: Vec<usize>,
    pub axes: Vec<Vec<f64>>,
    /// P = tr_S ρ̂; complex in general, see [`FieldSlice::imag_residue`].
    pub density: Vec<Complex64>,
    /// tr_S[Q ρ̂] when a coupling operator was supplied.
    pub coupling_trace: Option<Vec<Complex64>>,
    /// ρ̂ itself, d² row-major entries per grid point, when requested.
    pub operator: Option<Vec<Complex64>>,
    pub dim: usize,
    xi: Vec<Complex64>,
}

impl FieldSlice {
    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(Vec::len).collect()
    }

    pub fn len(&self) -> usize {
        self.density.len()
    }

    pub fn is_empty(&self) -> bool {
        self.density.is_empty()
    }

    /// max |Im P| / max |P|.
    pub fn imag_residue(&self) -> f64 {
        let top = self.density.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let im = self.density.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
        if top == 0.0 {
            0.0
        } else {
            im / top
        }
    }

    /// Re P after checking that the imaginary part is negligible.
    pub fn real_density(&self, tol: f64) -> Result<Vec<f64>> {
        let r = self.imag_residue();
        if r > tol {
            return Err(Error::ImaginaryResidue {
                what: "dissipaton distribution P(x)".into(),
                value: r,
            });
        }
        Ok(self.density.iter().map(|z| z.re).collect())
    }

    /// J_k = 2 ξ_k tr_S[Q ρ̂] for displayed mode `k`.
    pub fn current(&self, k: usize) -> Result<Vec<Complex64>> {
        let pos = self
            .dims
            .iter()
            .position(|&d| d == k)
            .ok_or_else(|| Error::Field(format!("mode {k} is not a displayed dimension")))?;
        let qt = self
            .coupling_trace
            .as_ref()
            .ok_or_else(|| Error::Field("probability current needs the coupling operator".into()))?;
        let f = self.xi[pos] * 2.0;
        Ok(qt.iter().map(|z| f * z).collect())
    }

    fn weights(axis: &[f64]) -> Vec<f64> {
        // trapezoid weights
        let n = axis.len();
        (0..n)
            .map(|i| {
                let left = if i > 0 { axis[i] - axis[i - 1] } else { 0.0 };
                let right = if i + 1 < n { axis[i + 1] - axis[i] } else { 0.0 };
                0.5 * (left + right)
            })
            .collect()
    }

    fn integrate_with<F: Fn(&[f64]) -> f64>(&self, values: &[Complex64], f: F) -> Complex64 {
        let w: Vec<Vec<f64>> = self.axes.iter().map(|a| Self::weights(a)).collect();
        match self.axes.len() {
            1 => (0..self.axes[0].len()).map(|i| values[i] * (w[0][i] * f(&[self.axes[0][i]]))).sum(),
            _ => {
                let n1 = self.axes[1].len();
                let mut s = ZERO;
                for i in 0..self.axes[0].len() {
                    for j in 0..n1 {
                        s += values[i * n1 + j] * (w[0][i] * w[1][j] * f(&[self.axes[0][i], self.axes[1][j]]));
                    }
                }
                s
            }
        }
    }

    /// Trapezoid ∫ P dx.
    pub fn total(&self) -> Complex64 {
        self.integrate_with(&self.density, |_| 1.0)
    }

    /// Trapezoid ∫ x_{dims[axis]} P dx.
    pub fn mean(&self, axis: usize) -> Complex64 {
        self.integrate_with(&self.density, |x| x[axis])
    }

    /// Integrates a 2-dimensional slice over the other axis, leaving `keep`.
    pub fn marginal(&self, keep: usize) -> Result<Vec<Complex64>> {
        if self.axes.len() != 2 || keep > 1 {
            return Err(Error::Field("marginal needs a 2-dimensional slice".into()));
        }
        let other = 1 - keep;
        let w = Self::weights(&self.axes[other]);
        let n1 = self.axes[1].len();
        Ok((0..self.axes[keep].len())
            .map(|i| {
                (0..self.axes[other].len())
                    .map(|j| {
                        let p = if keep == 0 { i * n1 + j } else { j * n1 + i };
                        self.density[p] * w[j]
                    })
                    .sum()
            })
            .collect())
    }

    /// Projects a 1-dimensional operator field back onto DDOs,
    /// ρ_n = ∫ ρ̂(x) ζⁿ He_n(x) dx for n = 0..=max_order.
    pub fn project(&self, zeta: Complex64, max_order: usize) -> Result<Vec<DMatrix<Complex64>>> {
        if self.axes.len() != 1 {
            return Err(Error::Field("projection needs a 1-dimensional slice".into()));
        }
        let op = self
            .operator
            .as_ref()
            .ok_or_else(|| Error::Field("projection needs operator samples".into()))?;
        let d = self.dim;
        let b = d * d;
        let w = Self::weights(&self.axes[0]);
        let mut out = vec![vec![ZERO; b]; max_order + 1];
        for (p, &x) in self.axes[0].iter().enumerate() {
            let he = hermite_he(max_order, x);
            for (n, acc) in out.iter_mut().enumerate() {
                let f = zeta.powu(n as u32) * he[n] * w[p];
                for e in 0..b {
                    acc[e] += op[p * b + e] * f;
                }
            }
        }
        Ok(out.into_iter().map(|v| DMatrix::from_row_slice(d, d, &v)).collect())
    }

    /// CSV with one row per grid point: x columns, P and its imaginary part,
    /// current components, and optional ρ̂ entries.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let mut header: Vec<String> = self.dims.iter().map(|k| format!("x{k}")).collect();
        header.push("P".into());
        header.push("P_im".into());
        let currents = if self.coupling_trace.is_some() {
            self.dims.iter().map(|&k| self.current(k)).collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        if !currents.is_empty() {
            for k in &self.dims {
                header.push(format!("J{k}"));
                header.push(format!("J{k}_im"));
            }
        }
        if self.operator.is_some() {
            for r in 0..self.dim {
                for c in 0..self.dim {
                    header.push(format!("rho_{r}{c}_re"));
                    header.push(format!("rho_{r}{c}_im"));
                }
            }
        }
        writeln!(out, "{}", header.join(","))?;
        let shape = self.shape();
        let b = self.dim * self.dim;
        for p in 0..self.len() {
            let mut row: Vec<String> = Vec::with_capacity(header.len());
            if shape.len() == 1 {
                row.push(format!("{:.17e}", self.axes[0][p]));
            } else {
                row.push(format!("{:.17e}", self.axes[0][p / shape[1]]));
                row.push(format!("{:.17e}", self.axes[1][p % shape[1]]));
            }
            row.push(format!("{:.17e}", self.density[p].re));
            row.push(format!("{:.17e}", self.density[p].im));
            for j in &currents {
                row.push(format!("{:.17e}", j[p].re));
                row.push(format!("{:.17e}", j[p].im));
            }
            if let Some(op) = &self.operator {
                for z in &op[p * b..(p + 1) * b] {
                    row.push(format!("{:.17e}", z.re));
                    row.push(format!("{:.17e}", z.im));
                }
            }
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Reconstructs ρ̂ over the displayed modes `dims` (all other occupations
/// zero, which marginalizes them out).
pub fn reconstruct(
    store: &DdoStore,
    modes: &DissipatonModeSet,
    dims: &[usize],
    axes: &[Vec<f64>],
    coupling: Option<&DMatrix<Complex64>>,
    keep_operator: bool,
) -> Result<FieldSlice> {
    let h = store.hierarchy();
    if h.modes() != modes.len() {
        return Err(Error::DimensionMismatch(format!(
            "store has {} modes, mode set has {}",
            h.modes(),
            modes.len()
        )));
    }
    validate_dims(modes, dims, axes)?;
    let d = store.dim();
    let b = d * d;
    let q = match coupling {
        Some(q) if q.nrows() != d || q.ncols() != d => {
            return Err(Error::DimensionMismatch("coupling operator size differs from the store".into()))
        }
        Some(q) => Some(row_major(q)),
        None => None,
    };
    let depth = h.depth();

    // indices with every non-displayed occupation zero
    let selected: Vec<(usize, Vec<usize>)> = (0..h.len())
        .filter_map(|i| {
            let occ = h.occupations(i);
            let hidden = occ.iter().enumerate().any(|(k, &n)| n > 0 && !dims.contains(&k));
            let empty = store.block(i).iter().all(|z| *z == ZERO);
            (!hidden && !empty).then(|| (i, dims.iter().map(|&k| occ[k] as usize).collect()))
        })
        .collect();
    let traces: Vec<Complex64> = selected.iter().map(|(i, _)| store.trace(*i)).collect();
    let qtraces: Option<Vec<Complex64>> = q
        .as_ref()
        .map(|q| selected.iter().map(|(i, _)| trace_product(q, store.block(*i), d)).collect());

    // basis tables: tables[dim][point][n] = φ_n(x; ζ)
    let tables: Vec<Vec<Vec<Complex64>>> = dims
        .iter()
        .zip(axes)
        .map(|(&k, axis)| {
            let zeta = modes.modes[k].zeta;
            axis.iter()
                .map(|&x| {
                    let s = scaled_basis(depth, x);
                    let mut zp = Complex64::new(1.0, 0.0);
                    s.iter()
                        .enumerate()
                        .map(|(n, v)| {
                            if n > 0 {
                                zp *= zeta;
                            }
                            if *v == 0.0 {
                                ZERO
                            } else {
                                Complex64::new(*v, 0.0) / zp
                            }
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    for &k in dims {
        let needs = selected.iter().any(|(_, n)| n[dims.iter().position(|&x| x == k).unwrap()] > 0);
        if needs && modes.modes[k].zeta == ZERO {
            return Err(Error::ZeroCoefficient { mode: k });
        }
    }

    let shape: Vec<usize> = axes.iter().map(Vec::len).collect();
    let points: usize = shape.iter().product();
    let coords = |p: usize| -> Vec<usize> {
        if shape.len() == 1 {
            vec![p]
        } else {
            vec![p / shape[1], p % shape[1]]
        }
    };

    let results: Vec<(Complex64, Complex64, Vec<Complex64>)> = (0..points)
        .into_par_iter()
        .map(|p| {
            let c = coords(p);
            let mut dens = ZERO;
            let mut qt = ZERO;
            let mut op = if keep_operator { vec![ZERO; b] } else { Vec::new() };
            for (s, (i, occ)) in selected.iter().enumerate() {
                let mut w = Complex64::new(1.0, 0.0);
                for (a, &n) in occ.iter().enumerate() {
                    w *= tables[a][c[a]][n];
                }
                if w == ZERO {
                    continue;
                }
                dens += traces[s] * w;
                if let Some(qs) = &qtraces {
                    qt += qs[s] * w;
                }
                if keep_operator {
                    for (o, v) in op.iter_mut().zip(store.block(*i)) {
                        *o += v * w;
                    }
                }
            }
            (dens, qt, op)
        })
        .collect();

    let mut density = Vec::with_capacity(points);
    let mut qt = Vec::with_capacity(points);
    let mut operator = if keep_operator { Some(Vec::with_capacity(points * b)) } else { None };
    for (p, q_, o) in results {
        density.push(p);
        qt.push(q_);
        if let Some(v) = operator.as_mut() {
            v.extend(o);
        }
    }
    Ok(FieldSlice {
        dims: dims.to_vec(),
        axes: axes.to_vec(),
        density,
        coupling_trace: coupling.map(|_| qt),
        operator,
        dim: d,
        xi: dims.iter().map(|&k| modes.modes[k].xi).collect(),
    })
}

/// J_k = 2 ξ_k tr_S[Q ρ̂] on the grid.
pub fn probability_current(
    store: &DdoStore,
    modes: &DissipatonModeSet,
    coupling: &DMatrix<Complex64>,
    dims: &[usize],
    axes: &[Vec<f64>],
    k: usize,
) -> Result<Vec<Complex64>> {
    reconstruct(store, modes, dims, axes, Some(coupling), false)?.current(k)
}

fn uniform_step(axis: &[f64]) -> Result<f64> {
    let h = (axis[axis.len() - 1] - axis[0]) / (axis.len() - 1) as f64;
    if axis.windows(2).any(|w| ((w[1] - w[0]) - h).abs() > 1e-9 * h) {
        return Err(Error::Field("finite differences need a uniform grid".into()));
    }
    if axis.len() < 5 {
        return Err(Error::Field("finite differences need at least 5 points per axis".into()));
    }
    Ok(h)
}

/// Σ_k Γ̂_k P − Σ_k ∂_k J_k and Σ_k Γ̂_k P at the interior grid points (two
/// points away from every edge); `None` elsewhere.
#[allow(clippy::type_complexity)]
fn balance_terms(
    density: &[Complex64],
    qtrace: &[Complex64],
    axes: &[Vec<f64>],
    gammas: &[Complex64],
    xis: &[Complex64],
) -> Result<(Vec<Option<Complex64>>, Vec<Option<Complex64>>)> {
    let steps = axes.iter().map(|a| uniform_step(a)).collect::<Result<Vec<_>>>()?;
    let shape: Vec<usize> = axes.iter().map(Vec::len).collect();
    let strides: Vec<usize> = if shape.len() == 1 { vec![1] } else { vec![shape[1], 1] };
    let points: usize = shape.iter().product();
    let mut res = vec![None; points];
    let mut gam = vec![None; points];
    for p in 0..points {
        let c: Vec<usize> = if shape.len() == 1 { vec![p] } else { vec![p / shape[1], p % shape[1]] };
        if c.iter().zip(&shape).any(|(&i, &n)| i < 2 || i + 2 >= n) {
            continue;
        }
        let mut g = ZERO;
        let mut div = ZERO;
        for a in 0..shape.len() {
            let s = strides[a];
            let h = steps[a];
            let f = |v: &[Complex64], o: isize| v[(p as isize + o * s as isize) as usize];
            let d1 = |v: &[Complex64]| (-f(v, 2) + f(v, 1) * 8.0 - f(v, -1) * 8.0 + f(v, -2)) / (12.0 * h);
            let d2 = |v: &[Complex64]| {
                (-f(v, 2) + f(v, 1) * 16.0 - f(v, 0) * 30.0 + f(v, -1) * 16.0 - f(v, -2)) / (12.0 * h * h)
            };
            let x = axes[a][c[a]];
            g += gammas[a] * (d2(density) + d1(density) * x + density[p]);
            div += xis[a] * 2.0 * d1(qtrace);
        }
        res[p] = Some(g - div);
        gam[p] = Some(g);
    }
    Ok((res, gam))
}

/// ∂P/∂t predicted by the field equation, Σ Γ̂_k P − ∇·J, at interior points.
pub fn balance_rate(slice: &FieldSlice, modes: &DissipatonModeSet) -> Result<Vec<Option<Complex64>>> {
    let qt = slice
        .coupling_trace
        .as_ref()
        .ok_or_else(|| Error::Field("balance needs the coupling operator".into()))?;
    let gammas: Vec<Complex64> = slice.dims.iter().map(|&k| modes.modes[k].gamma).collect();
    let xis: Vec<Complex64> = slice.dims.iter().map(|&k| modes.modes[k].xi).collect();
    Ok(balance_terms(&slice.density, qt, &slice.axes, &gammas, &xis)?.0)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BalanceReport {
    /// max |R| / max |Γ̂P| (or max |R| when Γ̂P vanishes).
    pub residual: f64,
    pub absolute: f64,
    pub scale: f64,
    /// Richardson estimate of the finite-difference error in `residual`.
    pub discretization: f64,
    /// The discretization estimate exceeds the requested tolerance.
    pub inconclusive: bool,
}

fn subsample(v: &[Complex64], shape: &[usize]) -> Vec<Complex64> {
    if shape.len() == 1 {
        v.iter().step_by(2).cloned().collect()
    } else {
        let mut out = Vec::new();
        for i in (0..shape[0]).step_by(2) {
            for j in (0..shape[1]).step_by(2) {
                out.push(v[i * shape[1] + j]);
            }
        }
        out
    }
}

/// Steady-state balance R = Σ_k Γ̂_k P − Σ_k ∂J_k/∂x_k with
/// Γ̂_k = γ_k ∂(∂ + x), fourth-order central differences, and a grid-halving
/// error estimate. Axes need an odd number of uniform points.
pub fn smoluchowski_residual(
    store: &DdoStore,
    modes: &DissipatonModeSet,
    coupling: &DMatrix<Complex64>,
    dims: &[usize],
    axes: &[Vec<f64>],
    tolerance: f64,
) -> Result<BalanceReport> {
    if axes.iter().any(|a| a.len() % 2 == 0 || a.len() < 9) {
        return Err(Error::Field("grid halving needs an odd number (≥ 9) of points per axis".into()));
    }
    let slice = reconstruct(store, modes, dims, axes, Some(coupling), false)?;
    let qt = slice.coupling_trace.as_ref().expect("coupling supplied");
    let gammas: Vec<Complex64> = dims.iter().map(|&k| modes.modes[k].gamma).collect();
    let xis: Vec<Complex64> = dims.iter().map(|&k| modes.modes[k].xi).collect();
    let (fine, gp) = balance_terms(&slice.density, qt, axes, &gammas, &xis)?;
    let absolute = fine.iter().flatten().map(|z| z.norm()).fold(0.0, f64::max);
    let top = gp.iter().flatten().map(|z| z.norm()).fold(0.0, f64::max);
    let scale = if top > 0.0 { top } else { 1.0 };

    let shape = slice.shape();
    let coarse_axes: Vec<Vec<f64>> = axes.iter().map(|a| a.iter().step_by(2).cloned().collect()).collect();
    let (coarse, _) = balance_terms(
        &subsample(&slice.density, &shape),
        &subsample(qt, &shape),
        &coarse_axes,
        &gammas,
        &xis,
    )?;
    let fine_at_coarse = subsample(&fine.iter().map(|z| z.unwrap_or(Complex64::new(f64::NAN, 0.0))).collect::<Vec<_>>(), &shape);
    let diff = coarse
        .iter()
        .zip(&fine_at_coarse)
        .filter_map(|(c, f)| c.map(|c| (c - f).norm()))
        .filter(|v| v.is_finite())
        .fold(0.0, f64::max);
    let discretization = diff / 15.0 / scale;
    Ok(BalanceReport {
        residual: absolute / scale,
        absolute,
        scale,
        discretization,
        inconclusive: discretization > tolerance,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct IndexResidual {
    pub index: MultiIndex,
    pub residual: f64,
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

/// Residuals of the steady-state relation
/// ⟨x_n⟩ = (2/γ_n) Σ_k [ξ_k n_k ⟨Q x_{n_k⁻}⟩ + γ_k C(n_k,2) ⟨x_{n_kk⁻⁻}⟩]
/// for every index with 1 ≤ tier ≤ `max_tier`.
pub fn equilibrium_recurrence_residual(
    store: &DdoStore,
    modes: &DissipatonModeSet,
    coupling: &DMatrix<Complex64>,
    max_tier: usize,
) -> Result<Vec<IndexResidual>> {
    check_modes(store, modes)?;
    let h = store.hierarchy();
    if max_tier > h.depth() {
        return Err(Error::InsufficientTruncation {
            requested: max_tier,
            depth: h.depth(),
        });
    }
    let d = store.dim();
    let q = row_major(coupling);
    let x = x_operators(store, modes)?;
    let mut out = Vec::new();
    for tier in 1..=max_tier {
        for i in h.tier_range(tier) {
            let occ = h.occupations(i);
            let gamma_n: Complex64 = occ.iter().zip(&modes.modes).map(|(&n, m)| m.gamma * n as f64).sum();
            if gamma_n == ZERO {
                continue;
            }
            let mut rhs = ZERO;
            for (k, m) in modes.modes.iter().enumerate() {
                let nk = occ[k] as f64;
                if occ[k] >= 1 {
                    let j = h.lowered(i, k).expect("lower neighbour");
                    rhs += m.xi * nk * trace_product(&q, x.block(j), d);
                }
                if occ[k] >= 2 {
                    let j = h.lowered(h.lowered(i, k).unwrap(), k).unwrap();
                    rhs += m.gamma * (nk * (nk - 1.0) / 2.0) * x.trace(j);
                }
            }
            rhs *= 2.0 / gamma_n;
            out.push(IndexResidual {
                index: h.index(i),
                residual: (x.trace(i) - rhs).norm(),
            });
        }
    }
    Ok(out)
}

/// Residuals of the steady-state relation for ⟨A x_n⟩ with a general system
/// operator A:
///
/// ```text
/// i⟨[H,A] x_n⟩ + i Σ_k ζ_k ⟨[Q,A] x_{n_k⁺}⟩ + Σ_k ξ_k n_k ⟨{A,Q} x_{n_k⁻}⟩
///   = Σ_k γ_k (n_k ⟨A x_n⟩ − n_k(n_k−1) ⟨A x_{n_kk⁻⁻}⟩)
/// ```
///
/// for tiers 0..=max_tier; needs max_tier + 1 ≤ L.
pub fn operator_moment_residual(
    store: &DdoStore,
    modes: &DissipatonModeSet,
    model: &SystemModel,
    a: &DMatrix<Complex64>,
    max_tier: usize,
) -> Result<Vec<IndexResidual>> {
    check_modes(store, modes)?;
    let h = store.hierarchy();
    if max_tier + 1 > h.depth() {
        return Err(Error::InsufficientTruncation {
            requested: max_tier + 1,
            depth: h.depth(),
        });
    }
    let d = store.dim();
    if a.nrows() != d || model.dim() != d {
        return Err(Error::DimensionMismatch("operator sizes differ from the store".into()));
    }
    let hs = model.hamiltonian();
    let q = model.coupling();
    let ha = row_major(&(hs * a - a * hs));
    let qa = row_major(&(q * a - a * q));
    let aq = row_major(&(a * q + q * a));
    let am = row_major(a);
    let x = x_operators(store, modes)?;
    let mut out = Vec::new();
    for tier in 0..=max_tier {
        for i in h.tier_range(tier) {
            let occ = h.occupations(i);
            let mut lhs = I * trace_product(&ha, x.block(i), d);
            let mut rhs = ZERO;
            for (k, m) in modes.modes.iter().enumerate() {
                let nk = occ[k] as f64;
                let up = h.raised(i, k).expect("tier below the truncation");
                lhs += I * m.zeta * trace_product(&qa, x.block(up), d);
                if occ[k] >= 1 {
                    let j = h.lowered(i, k).unwrap();
                    lhs += m.xi * nk * trace_product(&aq, x.block(j), d);
                    rhs += m.gamma * nk * trace_product(&am, x.block(i), d);
                }
                if occ[k] >= 2 {
                    let j = h.lowered(h.lowered(i, k).unwrap(), k).unwrap();
                    rhs -= m.gamma * nk * (nk - 1.0) * trace_product(&am, x.block(j), d);
                }
            }
            out.push(IndexResidual {
                index: h.index(i),
                residual: (lhs - rhs).norm(),
            });
        }
    }
    Ok(out)
}

pub fn pauli() -> [DMatrix<Complex64>; 3] {
    let c = |re: f64, im: f64| Complex64::new(re, im);
    [
        DMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)]),
        DMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(0.0, -1.0), c(0.0, 1.0), c(0.0, 0.0)]),
        DMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(-1.0, 0.0)]),
    ]
}

/// Tunnelling amplitude V if H_S = V σ_x and Q = σ_z.
pub fn spin_boson_tunnelling(model: &SystemModel) -> Result<f64> {
    const TOL: f64 = 1e-12;
    if model.dim() != 2 {
        return Err(Error::ModelMismatch("spin–boson closure needs a two-level system".into()));
    }
    let [sx, _, sz] = pauli();
    let v = model.hamiltonian()[(0, 1)].re;
    if (model.hamiltonian() - &sx * Complex64::new(v, 0.0)).norm() > TOL {
        return Err(Error::ModelMismatch("spin–boson closure needs H_S = V σ_x".into()));
    }
    if (model.coupling() - sz).norm() > TOL {
        return Err(Error::ModelMismatch("spin–boson closure needs Q = σ_z".into()));
    }
    Ok(v)
}

/// Largest residual of the three coupled spin–boson relations (rows σ_x,
/// σ_y, σ_z) over tiers 0..=max_tier, written out with s_i(n) = ⟨σ_i x_n⟩
/// and G_i(n) = Σ_k γ_k (n_k s_i(n) − n_k(n_k−1) s_i(n_kk⁻⁻)):
///
/// ```text
/// σ_x:  −2 Σ_k ζ_k s_y(n_k⁺)                       = G_x(n)
/// σ_y:  −2V s_z(n) + 2 Σ_k ζ_k s_x(n_k⁺)            = G_y(n)
/// σ_z:   2V s_y(n) + 2 Σ_k ξ_k n_k ⟨x_{n_k⁻}⟩       = G_z(n)
/// ```
pub fn spin_boson_closure_residual(
    store: &DdoStore,
    modes: &DissipatonModeSet,
    model: &SystemModel,
    max_tier: usize,
) -> Result<f64> {
    let v = spin_boson_tunnelling(model)?;
    check_modes(store, modes)?;
    let h = store.hierarchy();
    if max_tier + 1 > h.depth() {
        return Err(Error::InsufficientTruncation {
            requested: max_tier + 1,
            depth: h.depth(),
        });
    }
    let x = x_operators(store, modes)?;
    let sig = pauli().map(|m| row_major(&m));
    let s = |a: usize, j: usize| trace_product(&sig[a], x.block(j), 2);
    let mut worst: f64 = 0.0;
    for tier in 0..=max_tier {
        for i in h.tier_range(tier) {
            let occ = h.occupations(i);
            let mut g = [ZERO; 3];
            let mut up_y = ZERO;
            let mut up_x = ZERO;
            let mut low = ZERO;
            for (k, m) in modes.modes.iter().enumerate() {
                let nk = occ[k] as f64;
                let up = h.raised(i, k).expect("tier below the truncation");
                up_y += m.zeta * s(1, up);
                up_x += m.zeta * s(0, up);
                if occ[k] >= 1 {
                    low += m.xi * nk * x.trace(h.lowered(i, k).unwrap());
                    for (a, ga) in g.iter_mut().enumerate() {
                        *ga += m.gamma * nk * s(a, i);
                    }
                }
                if occ[k] >= 2 {
                    let j = h.lowered(h.lowered(i, k).unwrap(), k).unwrap();
                    for (a, ga) in g.iter_mut().enumerate() {
                        *ga -= m.gamma * nk * (nk - 1.0) * s(a, j);
                    }
                }
            }
            let rows = [
                -2.0 * up_y - g[0],
                -2.0 * v * s(2, i) + 2.0 * up_x - g[1],
                2.0 * v * s(1, i) + 2.0 * low - g[2],
            ];
            for r in rows {
                worst = worst.max(r.norm());
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bathcorr::{decompose_correlation, SpectralDensity};
    use crate::hierarchy::Hierarchy;
    use crate::moments::x_moment;
    use std::sync::Arc;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn ground_basis_value() {
        assert!((basis_function(0, 0.0, c(0.7, 0.2)) - c(0.398_942_280_401_432_7, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn basis_integrals() {
        let grid = uniform_grid(-14.0, 14.0, 2801);
        let w = FieldSlice::weights(&grid);
        let tables: Vec<Vec<f64>> = grid.iter().map(|&x| scaled_basis(6, x)).collect();
        for n in 0..=6 {
            let s: f64 = tables.iter().zip(&w).map(|(t, w)| t[n] * w).sum();
            let expected = if n == 0 { 1.0 } else { 0.0 };
            assert!((s - expected).abs() < 1e-10, "n={n} {s}");
        }
    }

    #[test]
    fn basis_recurrences() {
        let h = 1e-5;
        for i in 0..=64 {
            let x = -8.0 + 0.25 * i as f64;
            let t = scaled_basis(13, x);
            let tp = scaled_basis(13, x + h);
            let tm = scaled_basis(13, x - h);
            for n in 1..=12 {
                assert!((x * t[n] - t[n - 1] - (n + 1) as f64 * t[n + 1]).abs() < 1e-10);
                let deriv = (tp[n] - tm[n]) / (2.0 * h);
                assert!((deriv + (n + 1) as f64 * t[n + 1]).abs() < 1e-8, "n={n} x={x}");
            }
        }
    }

    #[test]
    fn hermite_values() {
        let he = hermite_he(4, 1.5);
        assert_eq!(he, vec![1.0, 1.5, 1.5 * 1.5 - 1.0, 1.5f64.powi(3) - 4.5, 1.5f64.powi(4) - 6.0 * 2.25 + 3.0]);
    }

    fn random_store(seed: u64, modes: usize, depth: usize, dim: usize) -> DdoStore {
        let h = Arc::new(Hierarchy::new(modes, depth).unwrap());
        let mut store = DdoStore::zeros(h, dim);
        let mut state = seed;
        for z in store.data_mut() {
            let mut next = || {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
            };
            *z = c(next(), next());
        }
        store
    }

    fn drude_modes() -> DissipatonModeSet {
        // one real self-paired exponent, real ζ and ξ
        decompose_correlation(&SpectralDensity::drude(0.3, 1.0), 0.5, 0).unwrap()
    }

    #[test]
    fn factorized_state_gives_gaussian() {
        let modes = decompose_correlation(&SpectralDensity::brownian(0.5, 1.0, 1.0), 1.0, 1).unwrap();
        let h = Arc::new(Hierarchy::new(3, 3).unwrap());
        let mut store = DdoStore::zeros(h, 2);
        store.data_mut()[0] = c(0.4, 0.0);
        store.data_mut()[3] = c(0.6, 0.0);
        let axis = uniform_grid(-6.0, 6.0, 61);
        let f = reconstruct(&store, &modes, &[0, 1], &[axis.clone(), axis.clone()], None, false).unwrap();
        for (p, z) in f.density.iter().enumerate() {
            let (x, y) = (axis[p / 61], axis[p % 61]);
            let g = (-(x * x + y * y) / 2.0).exp() / (2.0 * std::f64::consts::PI);
            assert!((z - g).norm() < 1e-15);
        }
    }

    #[test]
    fn split_pair_rejected() {
        let modes = decompose_correlation(&SpectralDensity::brownian(0.5, 1.0, 1.0), 1.0, 1).unwrap();
        let store = random_store(1, 3, 2, 2);
        let err = reconstruct(&store, &modes, &[0], &[default_grid()], None, false).unwrap_err();
        assert!(matches!(err, Error::Field(_)));
    }

    #[test]
    fn normalization_and_first_moment() {
        let modes = decompose_correlation(&SpectralDensity::brownian(0.5, 1.0, 1.0), 1.0, 1).unwrap();
        let mut store = random_store(7, 3, 4, 2);
        // unit trace on tier 0
        store.data_mut()[0] = c(0.3, 0.0);
        store.data_mut()[3] = c(0.7, 0.0);
        let axis = uniform_grid(-10.0, 10.0, 201);
        let f = reconstruct(&store, &modes, &[0, 1], &[axis.clone(), axis], None, false).unwrap();
        assert!((f.total() - c(1.0, 0.0)).norm() < 1e-9);
        let x = x_operators(&store, &modes).unwrap();
        let h = store.hierarchy();
        for (a, k) in [0usize, 1].into_iter().enumerate() {
            let e = h.position(&MultiIndex::unit(3, k)).unwrap();
            assert!((f.mean(a) - x_moment(&x, e)).norm() < 1e-8);
        }
    }

    #[test]
    fn pair_distribution_is_conjugate_symmetric() {
        // P(x1, x2)* = P(x2, x1) for a conjugate pair
        let modes = decompose_correlation(&SpectralDensity::brownian(0.5, 1.0, 1.0), 1.0, 0).unwrap();
        let h = Arc::new(Hierarchy::new(2, 3).unwrap());
        let mut store = random_store(3, 2, 3, 2);
        // make the store Hermitian-paired: ρ_{n̄} = ρ_n†
        let conj = h.conjugate_positions(&modes.bar_map()).unwrap();
        for i in 0..h.len() {
            let j = conj[i];
            if j < i {
                continue;
            }
            let m = store.matrix(i);
            if i == j {
                let herm = (&m + m.adjoint()) * c(0.5, 0.0);
                store.set_matrix(i, &herm).unwrap();
            } else {
                store.set_matrix(j, &m.adjoint()).unwrap();
            }
        }
        let axis = uniform_grid(-4.0, 4.0, 21);
        let f = reconstruct(&store, &modes, &[0, 1], &[axis.clone(), axis], None, false).unwrap();
        for i in 0..21 {
            for j in 0..21 {
                assert!((f.density[i * 21 + j].conj() - f.density[j * 21 + i]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn real_mode_distribution_is_real() {
        let modes = drude_modes();
        let mut store = random_store(5, 1, 4, 2);
        for i in 0..store.hierarchy().len() {
            let m = store.matrix(i);
            store.set_matrix(i, &((&m + m.adjoint()) * c(0.5, 0.0))).unwrap();
        }
        let f = reconstruct(&store, &modes, &[0], &[default_grid()], None, false).unwrap();
        assert!(f.imag_residue() <= REALNESS_TOLERANCE);
        assert!(f.real_density(REALNESS_TOLERANCE).is_ok());
    }

    #[test]
    fn marginal_matches_smaller_reconstruction() {
        let modes = decompose_correlation(&SpectralDensity::drude(0.3, 1.0), 1.0, 1).unwrap();
        let store = random_store(11, 2, 3, 2);
        let wide = uniform_grid(-12.0, 12.0, 241);
        let axis = uniform_grid(-5.0, 5.0, 11);
        let both = reconstruct(&store, &modes, &[0, 1], &[axis.clone(), wide], None, false).unwrap();
        let single = reconstruct(&store, &modes, &[0], &[axis], None, false).unwrap();
        let m = both.marginal(0).unwrap();
        for (a, b) in m.iter().zip(&single.density) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn projection_recovers_ddos() {
        let modes = drude_modes();
        let store = random_store(13, 1, 6, 2);
        let grid = uniform_grid(-12.0, 12.0, 801);
        let f = reconstruct(&store, &modes, &[0], &[grid], None, true).unwrap();
        let back = f.project(modes.modes[0].zeta, 6).unwrap();
        for (n, m) in back.iter().enumerate() {
            assert!((m - store.matrix(n)).norm() < 1e-8, "n={n}");
        }
    }

    #[test]
    fn current_vanishes_without_dissipative_part() {
        let modes = DissipatonModeSet::from_exponents(1.0, &[(c(2.0, 0.0), c(1.0, 0.0))]).unwrap();
        let store = random_store(2, 1, 3, 2);
        let [_, _, sz] = pauli();
        let j = probability_current(&store, &modes, &sz, &[0], &[default_grid()], 0).unwrap();
        assert!(j.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn decoupled_balance_is_zero() {
        let modes = decompose_correlation(&SpectralDensity::drude(0.0, 1.0), 0.5, 0).unwrap();
        let h = Arc::new(Hierarchy::new(1, 3).unwrap());
        let mut store = DdoStore::zeros(h, 2);
        store.data_mut()[0] = c(1.0, 0.0);
        let [_, _, sz] = pauli();
        let r = smoluchowski_residual(&store, &modes, &sz, &[0], &[uniform_grid(-6.0, 6.0, 401)], 5e-3).unwrap();
        assert!(r.absolute < 1e-6, "{r:?}");
    }

    #[test]
    fn closure_rejects_other_models() {
        let [sx, _, sz] = pauli();
        let model = SystemModel::new(&sz * c(0.5, 0.0), sz.clone()).unwrap();
        assert!(matches!(spin_boson_tunnelling(&model), Err(Error::ModelMismatch(_))));
        let model = SystemModel::new(sx.clone(), sx).unwrap();
        assert!(matches!(spin_boson_tunnelling(&model), Err(Error::ModelMismatch(_))));
    }

    #[test]
    fn csv_layout() {
        let modes = drude_modes();
        let store = random_store(1, 1, 2, 2);
        let [_, _, sz] = pauli();
        let f = reconstruct(&store, &modes, &[0], &[uniform_grid(-1.0, 1.0, 3)], Some(&sz), true).unwrap();
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "x0,P,P_im,J0,J0_im,rho_00_re,rho_00_im,rho_01_re,rho_01_im,rho_10_re,rho_10_im,rho_11_re,rho_11_im"
        );
        assert_eq!(lines.count(), 3);
    }
}
