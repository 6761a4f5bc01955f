//! Right-hand side of the dissipaton equation of motion and its time
//! integration.
//!
//! For every index n:
//!
//! ```text
//! dρ_n/dt = −i[H_S, ρ_n] − (Σ_k n_k γ_k) ρ_n − i Σ_k [Q, ρ_{n_k⁺}]
//!           − i Σ_k n_k (η_k Q ρ_{n_k⁻} − η_k̄* ρ_{n_k⁻} Q)
//! ```
//!
//! with ρ above the truncation tier read as zero.

use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::bathcorr::DissipatonModeSet;
use crate::error::{Error, Result};
use crate::hierarchy::{DdoStore, Hierarchy};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const MINUS_I: Complex64 = Complex64::new(0.0, -1.0);

pub const HERMITICITY_TOLERANCE: f64 = 1e-12;
/// Any DDO entry above this magnitude aborts propagation.
pub const BLOWUP_NORM: f64 = 1e12;

fn hermitian_defect(m: &DMatrix<Complex64>) -> f64 {
    (m - m.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max)
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

#[derive(Clone, Debug)]
pub struct SystemModel {
    hamiltonian: DMatrix<Complex64>,
    coupling: DMatrix<Complex64>,
}

impl SystemModel {
    pub fn new(hamiltonian: DMatrix<Complex64>, coupling: DMatrix<Complex64>) -> Result<Self> {
        if !hamiltonian.is_square() || hamiltonian.shape() != coupling.shape() {
            return Err(Error::DimensionMismatch(format!(
                "H_S is {:?} and Q is {:?}; both must be the same square size",
                hamiltonian.shape(),
                coupling.shape()
            )));
        }
        for (name, m) in [("H_S", &hamiltonian), ("Q", &coupling)] {
            if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                return Err(Error::NonFinite(name.into()));
            }
            let defect = hermitian_defect(m);
            if defect > HERMITICITY_TOLERANCE {
                return Err(Error::NonHermitian {
                    what: name.into(),
                    defect,
                });
            }
        }
        Ok(Self { hamiltonian, coupling })
    }

    pub fn dim(&self) -> usize {
        self.hamiltonian.nrows()
    }

    pub fn hamiltonian(&self) -> &DMatrix<Complex64> {
        &self.hamiltonian
    }

    pub fn coupling(&self) -> &DMatrix<Complex64> {
        &self.coupling
    }

    /// Largest |eigenvalue| of H_S.
    pub fn hamiltonian_norm(&self) -> f64 {
        self.hamiltonian
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .map(|e| e.abs())
            .fold(0.0, f64::max)
    }
}

/// Builds the factorized initial store: ρ_0 = ρ_S, every other DDO zero.
pub fn initial_state(rho_s: &DMatrix<Complex64>, hierarchy: Arc<Hierarchy>) -> Result<DdoStore> {
    if !rho_s.is_square() {
        return Err(Error::DimensionMismatch("density matrix must be square".into()));
    }
    let defect = hermitian_defect(rho_s);
    if defect > HERMITICITY_TOLERANCE {
        return Err(Error::NonHermitian {
            what: "initial density matrix".into(),
            defect,
        });
    }
    let trace = rho_s.trace();
    if (trace - Complex64::new(1.0, 0.0)).norm() > 1e-12 {
        return Err(Error::UnphysicalState(format!("trace is {trace}, expected 1")));
    }
    let min_eig = rho_s
        .clone()
        .symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    if min_eig < -1e-12 {
        return Err(Error::UnphysicalState(format!("negative eigenvalue {min_eig:.3e}")));
    }
    let mut store = DdoStore::zeros(hierarchy, rho_s.nrows());
    store.set_matrix(0, rho_s)?;
    Ok(store)
}

/// Precomputed DEOM generator for one model, mode set and hierarchy.
#[derive(Debug)]
pub struct Deom {
    model: SystemModel,
    modes: DissipatonModeSet,
    hierarchy: Arc<Hierarchy>,
    h: Vec<Complex64>,
    q: Vec<Complex64>,
    damping: Vec<Complex64>,
    eta: Vec<Complex64>,
    eta_bar_conj: Vec<Complex64>,
    conj_positions: Vec<usize>,
}

impl Deom {
    pub fn new(model: SystemModel, modes: DissipatonModeSet, hierarchy: Arc<Hierarchy>) -> Result<Self> {
        if modes.len() != hierarchy.modes() {
            return Err(Error::DimensionMismatch(format!(
                "mode set has {} modes, hierarchy has {}",
                modes.len(),
                hierarchy.modes()
            )));
        }
        let damping = (0..hierarchy.len())
            .map(|i| {
                hierarchy
                    .occupations(i)
                    .iter()
                    .zip(&modes.modes)
                    .map(|(&n, m)| m.gamma * n as f64)
                    .sum()
            })
            .collect();
        let eta = modes.modes.iter().map(|m| m.eta).collect();
        let eta_bar_conj = modes.modes.iter().map(|m| modes.modes[m.bar_index].eta.conj()).collect();
        let conj_positions = hierarchy.conjugate_positions(&modes.bar_map())?;
        Ok(Self {
            h: row_major(model.hamiltonian()),
            q: row_major(model.coupling()),
            model,
            modes,
            hierarchy,
            damping,
            eta,
            eta_bar_conj,
            conj_positions,
        })
    }

    pub fn model(&self) -> &SystemModel {
        &self.model
    }

    pub fn modes(&self) -> &DissipatonModeSet {
        &self.modes
    }

    pub fn hierarchy(&self) -> &Arc<Hierarchy> {
        &self.hierarchy
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    /// Position of n̄ for every position n.
    pub fn conjugate_positions(&self) -> &[usize] {
        &self.conj_positions
    }

    /// Default step min(0.02 / max Re γ_k, 0.02 / ‖H_S‖).
    pub fn default_step(&self) -> f64 {
        let rate = self.modes.max_decay_rate();
        let h = self.model.hamiltonian_norm();
        let mut dt = f64::INFINITY;
        if rate > 0.0 {
            dt = dt.min(0.02 / rate);
        }
        if h > 0.0 {
            dt = dt.min(0.02 / h);
        }
        if dt.is_finite() {
            dt
        } else {
            0.02
        }
    }

    pub fn initial_state(&self, rho_s: &DMatrix<Complex64>) -> Result<DdoStore> {
        if rho_s.nrows() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "density matrix is {}x{}, model is {}-dimensional",
                rho_s.nrows(),
                rho_s.ncols(),
                self.dim()
            )));
        }
        initial_state(rho_s, self.hierarchy.clone())
    }

    fn check_store(&self, store: &DdoStore) -> Result<()> {
        let h = store.hierarchy();
        if h.modes() != self.hierarchy.modes() || h.depth() != self.hierarchy.depth() {
            return Err(Error::DimensionMismatch(format!(
                "store has K = {}, L = {}; generator has K = {}, L = {}",
                h.modes(),
                h.depth(),
                self.hierarchy.modes(),
                self.hierarchy.depth()
            )));
        }
        if store.dim() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "store blocks are {}-dimensional, model is {}-dimensional",
                store.dim(),
                self.dim()
            )));
        }
        Ok(())
    }

    /// Writes dρ/dt for every DDO of `input` into `output`.
    pub fn rhs(&self, input: &DdoStore, output: &mut DdoStore) -> Result<()> {
        self.check_store(input)?;
        self.check_store(output)?;
        let d = self.dim();
        let b = d * d;
        let k_modes = self.hierarchy.modes();
        let src = input.data();
        let hier = &*self.hierarchy;
        output
            .data_mut()
            .par_chunks_mut(b)
            .enumerate()
            .for_each_init(
                || vec![ZERO; 3 * b],
                |scratch, (i, out)| {
                    let rho = &src[i * b..(i + 1) * b];
                    let (up, rest) = scratch.split_at_mut(b);
                    let (left, right) = rest.split_at_mut(b);
                    up.fill(ZERO);
                    left.fill(ZERO);
                    right.fill(ZERO);
                    let occ = hier.occupations(i);
                    for k in 0..k_modes {
                        if let Some(j) = hier.raised(i, k) {
                            for (u, x) in up.iter_mut().zip(&src[j * b..(j + 1) * b]) {
                                *u += x;
                            }
                        }
                        if occ[k] > 0 {
                            let j = hier.lowered(i, k).expect("lower neighbour exists when n_k > 0");
                            let n = occ[k] as f64;
                            let a = self.eta[k] * n;
                            let c = self.eta_bar_conj[k] * n;
                            for ((l, r), x) in left.iter_mut().zip(right.iter_mut()).zip(&src[j * b..(j + 1) * b]) {
                                *l += a * x;
                                *r += c * x;
                            }
                        }
                    }
                    let damp = self.damping[i];
                    for r in 0..d {
                        for c in 0..d {
                            let mut acc = ZERO;
                            let mut comm = ZERO;
                            for m in 0..d {
                                // [H, ρ] + [Q, Σρ⁺] + Q·left − right·Q
                                comm += self.h[r * d + m] * rho[m * d + c] - rho[r * d + m] * self.h[m * d + c];
                                comm += self.q[r * d + m] * up[m * d + c] - up[r * d + m] * self.q[m * d + c];
                                comm += self.q[r * d + m] * left[m * d + c] - right[r * d + m] * self.q[m * d + c];
                            }
                            acc += MINUS_I * comm;
                            acc -= damp * rho[r * d + c];
                            out[r * d + c] = acc;
                        }
                    }
                },
            );
        Ok(())
    }

    /// Max-norm of dρ/dt.
    pub fn residual(&self, store: &DdoStore) -> Result<f64> {
        let mut out = DdoStore::zeros(self.hierarchy.clone(), self.dim());
        self.rhs(store, &mut out)?;
        Ok(out.max_abs())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Integrator {
    /// Classical fixed-step fourth-order Runge–Kutta.
    Rk4,
    /// Dormand–Prince 5(4) with error control; `dt` is the initial step.
    Rk45 { rtol: f64, atol: f64 },
}

impl Default for Integrator {
    fn default() -> Self {
        Self::Rk4
    }
}

#[derive(Clone, Debug)]
pub struct PropagationSettings {
    pub dt: f64,
    pub t_end: f64,
    /// Observer is called every `sample_every` steps of length `dt`.
    pub sample_every: usize,
    pub integrator: Integrator,
    /// Zero DDOs whose Frobenius norm falls below this after each step.
    pub filter_threshold: Option<f64>,
}

impl PropagationSettings {
    pub fn rk4(dt: f64, t_end: f64, sample_every: usize) -> Self {
        Self {
            dt,
            t_end,
            sample_every,
            integrator: Integrator::Rk4,
            filter_threshold: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(Error::InvalidParameter(format!("t_end must be non-negative, got {}", self.t_end)));
        }
        if self.sample_every == 0 {
            return Err(Error::InvalidParameter("sample stride must be at least 1".into()));
        }
        if let Integrator::Rk45 { rtol, atol } = self.integrator {
            if !(rtol > 0.0 && atol > 0.0) {
                return Err(Error::InvalidParameter("RK45 tolerances must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }
}

fn axpy_into(out: &mut [Complex64], y: &[Complex64], a: Complex64, k: &[Complex64]) {
    out.par_iter_mut()
        .zip(y.par_iter().zip(k.par_iter()))
        .for_each(|(o, (y, k))| *o = y + a * k);
}

fn add_scaled(out: &mut [Complex64], a: Complex64, k: &[Complex64]) {
    out.par_iter_mut().zip(k.par_iter()).for_each(|(o, k)| *o += a * k);
}

struct Workspace {
    k: Vec<DdoStore>,
    tmp: DdoStore,
    acc: DdoStore,
}

impl Workspace {
    fn new(like: &DdoStore, stages: usize) -> Self {
        let z = DdoStore::zeros(like.hierarchy().clone(), like.dim());
        Self {
            k: vec![z.clone(); stages],
            tmp: z.clone(),
            acc: z,
        }
    }
}

fn rk4_step(deom: &Deom, y: &mut DdoStore, dt: f64, ws: &mut Workspace) -> Result<()> {
    let h = Complex64::new(dt, 0.0);
    let k = &mut ws.k[0];
    deom.rhs(y, k)?;
    axpy_into(ws.acc.data_mut(), y.data(), h / 6.0, k.data());
    axpy_into(ws.tmp.data_mut(), y.data(), h / 2.0, k.data());
    deom.rhs(&ws.tmp, k)?;
    add_scaled(ws.acc.data_mut(), h / 3.0, k.data());
    axpy_into(ws.tmp.data_mut(), y.data(), h / 2.0, k.data());
    deom.rhs(&ws.tmp, k)?;
    add_scaled(ws.acc.data_mut(), h / 3.0, k.data());
    axpy_into(ws.tmp.data_mut(), y.data(), h, k.data());
    deom.rhs(&ws.tmp, k)?;
    add_scaled(ws.acc.data_mut(), h / 6.0, k.data());
    std::mem::swap(y, &mut ws.acc);
    Ok(())
}

// Dormand–Prince 5(4) tableau
const DP_C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const DP_A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const DP_E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// One attempted Dormand–Prince step; returns the scaled error norm and
/// leaves the candidate solution in `ws.acc`.
fn dp_attempt(deom: &Deom, y: &DdoStore, h: f64, rtol: f64, atol: f64, ws: &mut Workspace) -> Result<f64> {
    let _ = DP_C;
    deom.rhs(y, &mut ws.k[0])?;
    for s in 1..7 {
        ws.tmp.data_mut().copy_from_slice(y.data());
        for (j, &a) in DP_A[s][..s].iter().enumerate() {
            if a != 0.0 {
                add_scaled(ws.tmp.data_mut(), Complex64::new(h * a, 0.0), ws.k[j].data());
            }
        }
        let (done, rest) = ws.k.split_at_mut(s);
        let _ = done;
        deom.rhs(&ws.tmp, &mut rest[0])?;
    }
    // the 7th stage input is the 5th-order solution (FSAL)
    ws.acc.data_mut().copy_from_slice(ws.tmp.data());
    let n = y.data().len();
    let err = (0..n)
        .into_par_iter()
        .map(|i| {
            let e: Complex64 = (0..7).map(|s| ws.k[s].data()[i] * (h * DP_E[s])).sum();
            let scale = atol + rtol * y.data()[i].norm().max(ws.acc.data()[i].norm());
            e.norm() / scale
        })
        .reduce(|| 0.0, f64::max);
    Ok(err)
}

fn apply_filter(store: &mut DdoStore, threshold: f64) {
    let b = store.block_len();
    store.data_mut().par_chunks_mut(b).skip(1).for_each(|blk| {
        let norm = blk.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm < threshold {
            blk.fill(ZERO);
        }
    });
}

fn check_blowup(store: &DdoStore, t: f64) -> Result<()> {
    let b = store.block_len();
    let worst = store
        .data()
        .par_chunks(b)
        .enumerate()
        .map(|(i, blk)| {
            let n = blk.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            (if n.is_nan() { f64::INFINITY } else { n }, i)
        })
        .reduce(|| (0.0, 0), |a, b| if b.0 > a.0 { b } else { a });
    if worst.0 > BLOWUP_NORM {
        return Err(Error::BlowUp {
            index: store.hierarchy().index(worst.1).to_string(),
            norm: worst.0,
            time: t,
        });
    }
    Ok(())
}

impl Deom {
    /// Integrates from t = 0 to `settings.t_end`, calling `observer` at t = 0
    /// and at every sample time. Returns the final store.
    pub fn propagate<F>(&self, initial: DdoStore, settings: &PropagationSettings, mut observer: F) -> Result<DdoStore>
    where
        F: FnMut(f64, &DdoStore) -> Result<()>,
    {
        settings.validate()?;
        self.check_store(&initial)?;
        let mut y = initial;
        observer(0.0, &y)?;
        let steps = settings.steps();
        match settings.integrator {
            Integrator::Rk4 => {
                let mut ws = Workspace::new(&y, 1);
                for step in 1..=steps {
                    rk4_step(self, &mut y, settings.dt, &mut ws)?;
                    if let Some(th) = settings.filter_threshold {
                        apply_filter(&mut y, th);
                    }
                    let t = step as f64 * settings.dt;
                    check_blowup(&y, t)?;
                    if step % settings.sample_every == 0 {
                        observer(t, &y)?;
                    }
                }
            }
            Integrator::Rk45 { rtol, atol } => {
                let mut ws = Workspace::new(&y, 7);
                let interval = settings.dt * settings.sample_every as f64;
                let samples = steps / settings.sample_every;
                let mut t = 0.0;
                let mut h = settings.dt;
                for s in 1..=samples {
                    let target = s as f64 * interval;
                    while target - t > 1e-12 * interval {
                        let step = h.min(target - t);
                        let err = dp_attempt(self, &y, step, rtol, atol, &mut ws)?;
                        if err <= 1.0 {
                            std::mem::swap(&mut y, &mut ws.acc);
                            t += step;
                            if let Some(th) = settings.filter_threshold {
                                apply_filter(&mut y, th);
                            }
                            check_blowup(&y, t)?;
                        }
                        let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                        if err <= 1.0 {
                            // do not let the clipped final step shrink h
                            h = h.max(step) * factor;
                        } else {
                            h = step * factor;
                        }
                        if h < 1e-14 * interval.max(1.0) {
                            return Err(Error::BlowUp {
                                index: "step size underflow".into(),
                                norm: err,
                                time: t,
                            });
                        }
                    }
                    t = target;
                    observer(t, &y)?;
                }
            }
        }
        Ok(y)
    }
}

/// Stored snapshots at the sample times.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub snapshots: Vec<DdoStore>,
}

impl Deom {
    pub fn propagate_trajectory(&self, initial: DdoStore, settings: &PropagationSettings) -> Result<Trajectory> {
        let mut times = Vec::new();
        let mut snapshots = Vec::new();
        self.propagate(initial, settings, |t, s| {
            times.push(t);
            snapshots.push(s.clone());
            Ok(())
        })?;
        Ok(Trajectory { times, snapshots })
    }
}

#[derive(Clone, Debug)]
pub struct SteadyState {
    pub store: DdoStore,
    pub residual: f64,
    pub time: f64,
    pub converged: bool,
}

impl Deom {
    /// Propagates with RK4 step `dt` until max |dρ/dt| ≤ `tol` (checked once
    /// per unit time) or `t_max` is reached.
    pub fn steady_state_from(&self, initial: DdoStore, dt: f64, tol: f64, t_max: f64) -> Result<SteadyState> {
        if !(tol > 0.0) {
            return Err(Error::InvalidParameter("steady-state tolerance must be positive".into()));
        }
        let settings = PropagationSettings::rk4(dt, t_max, 1);
        settings.validate()?;
        self.check_store(&initial)?;
        let check_every = ((1.0 / dt).round() as usize).max(1);
        let mut y = initial;
        let mut ws = Workspace::new(&y, 1);
        let mut residual = self.residual(&y)?;
        let steps = settings.steps();
        let mut t = 0.0;
        let mut step = 0;
        while residual > tol && step < steps {
            let chunk = check_every.min(steps - step);
            for _ in 0..chunk {
                rk4_step(self, &mut y, dt, &mut ws)?;
            }
            step += chunk;
            t = step as f64 * dt;
            check_blowup(&y, t)?;
            residual = self.residual(&y)?;
        }
        Ok(SteadyState {
            store: y,
            residual,
            time: t,
            converged: residual <= tol,
        })
    }

    /// Steady state from the maximally mixed system state.
    pub fn steady_state(&self, dt: f64, tol: f64, t_max: f64) -> Result<SteadyState> {
        let d = self.dim();
        let rho = DMatrix::<Complex64>::identity(d, d) / Complex64::new(d as f64, 0.0);
        self.steady_state_from(self.initial_state(&rho)?, dt, tol, t_max)
    }
}
