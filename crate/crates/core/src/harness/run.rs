//! decompose → propagate → moments / field / recurrences, plus output files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ModelConfig, RunConfig};
use super::models;
use crate::bathcorr::{decompose_correlation, DissipatonModeSet};
use crate::field;
use crate::hierarchy::{DdoStore, Hierarchy};
use crate::moments::{self, Statistics};
use crate::propagator::{Deom, PropagationSettings, SteadyState, SystemModel};
use crate::{Error, Result};

pub const MOMENT_COLUMNS: [&str; 10] = [
    "t", "F_mean", "F2", "F3", "F4", "sigma_F", "skewness", "kurtosis", "trace_err", "herm_err",
];

/// Everything needed to propagate one configuration at one depth.
pub struct Pipeline {
    pub config: RunConfig,
    pub model: SystemModel,
    pub modes: DissipatonModeSet,
    pub deom: Deom,
    pub rho0: DMatrix<Complex64>,
    pub settings: PropagationSettings,
}

impl Pipeline {
    pub fn new(config: &RunConfig) -> Result<Self> {
        Self::with_depth(config, config.hierarchy.depth)
    }

    /// Builds the pipeline; every failure here is a configuration error.
    pub fn with_depth(config: &RunConfig, depth: usize) -> Result<Self> {
        let cfg_err = |e: Error| match e {
            Error::Config(_) => e,
            other => Error::Config(other.to_string()),
        };
        config.validate()?;
        let model = models::build_model(config)?;
        let modes = decompose_correlation(&config.bath.spectral_density, config.bath.beta, config.bath.n_matsubara)
            .map_err(cfg_err)?;
        let hierarchy = match config.hierarchy.max_operators {
            Some(max) => Hierarchy::with_limit(modes.len(), depth, max),
            None => Hierarchy::new(modes.len(), depth),
        }
        .map_err(cfg_err)?;
        let deom = Deom::new(model.clone(), modes.clone(), Arc::new(hierarchy)).map_err(cfg_err)?;
        let rho0 = models::initial_state(config, model.dim())?;
        deom.initial_state(&rho0).map_err(cfg_err)?;
        let ic = &config.integrator;
        let dt = ic.dt.unwrap_or_else(|| deom.default_step());
        let settings = PropagationSettings {
            dt,
            t_end: ic.t_end,
            sample_every: ic.sample_every,
            integrator: ic.integrator(),
            filter_threshold: config.hierarchy.filter_threshold,
        };
        Ok(Self {
            config: config.clone(),
            model,
            modes,
            deom,
            rho0,
            settings,
        })
    }

    pub fn moment_order(&self) -> Option<usize> {
        self.config.outputs.moments.as_ref().map(|m| m.n_max)
    }
}

/// One output sample.
#[derive(Clone, Debug)]
pub struct Record {
    pub t: f64,
    pub statistics: Option<Statistics>,
    pub trace_err: f64,
    pub herm_err: f64,
    pub reduced: DMatrix<Complex64>,
}

pub struct Simulation {
    pub records: Vec<Record>,
    pub final_store: DdoStore,
    pub steady: Option<SteadyState>,
    pub steady_statistics: Option<Statistics>,
}

impl Simulation {
    pub fn initial_sigma(&self) -> Option<f64> {
        self.records.first()?.statistics.as_ref()?.sigma
    }

    /// Steady state when one was computed, otherwise the last sample.
    pub fn terminal_store(&self) -> &DdoStore {
        self.steady.as_ref().map_or(&self.final_store, |s| &s.store)
    }

    pub fn terminal_statistics(&self) -> Option<&Statistics> {
        self.steady_statistics
            .as_ref()
            .or_else(|| self.records.last()?.statistics.as_ref())
    }

    pub fn max_trace_error(&self) -> f64 {
        self.records.iter().map(|r| r.trace_err).fold(0.0, f64::max)
    }

    pub fn max_hermiticity_defect(&self) -> f64 {
        self.records.iter().map(|r| r.herm_err).fold(0.0, f64::max)
    }

    /// Values compared across hierarchy depths: reduced density matrices and
    /// raw moments at every sample and at the steady state.
    pub fn observables(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut push = |rho: &DMatrix<Complex64>, stats: Option<&Statistics>| {
            for z in rho.iter() {
                out.push(z.re);
                out.push(z.im);
            }
            if let Some(s) = stats {
                out.extend_from_slice(&s.raw);
            }
        };
        for r in &self.records {
            push(&r.reduced, r.statistics.as_ref());
        }
        if let Some(s) = &self.steady {
            push(&s.store.reduced(), self.steady_statistics.as_ref());
        }
        out
    }

    pub fn mean_series(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        let mut t = Vec::with_capacity(self.records.len());
        let mut f = Vec::with_capacity(self.records.len());
        for r in &self.records {
            t.push(r.t);
            f.push(*r.statistics.as_ref()?.raw.first()?);
        }
        Some((t, f))
    }
}

fn record(p: &Pipeline, t: f64, store: &DdoStore) -> Result<Record> {
    let statistics = match p.moment_order() {
        Some(n) => Some(moments::statistics(store, &p.modes, n, moments::DEFAULT_IMAG_TOLERANCE)?),
        None => None,
    };
    Ok(Record {
        t,
        statistics,
        trace_err: (store.trace(0) - 1.0).norm(),
        herm_err: store.hermiticity_defect(p.deom.conjugate_positions()),
        reduced: store.reduced(),
    })
}

pub fn simulate(p: &Pipeline) -> Result<Simulation> {
    let initial = p.deom.initial_state(&p.rho0)?;
    let mut records = Vec::new();
    let final_store = p.deom.propagate(initial, &p.settings, |t, s| {
        records.push(record(p, t, s)?);
        Ok(())
    })?;
    let (steady, steady_statistics) = match &p.config.outputs.steady_state {
        Some(ss) => {
            let st = p
                .deom
                .steady_state_from(final_store.clone(), p.settings.dt, ss.tolerance, ss.t_max)?;
            let stats = match p.moment_order() {
                Some(n) => Some(moments::statistics(&st.store, &p.modes, n, moments::DEFAULT_IMAG_TOLERANCE)?),
                None => None,
            };
            (Some(st), stats)
        }
        None => (None, None),
    };
    Ok(Simulation {
        records,
        final_store,
        steady,
        steady_statistics,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencyEstimate {
    /// Angular frequency of the largest Fourier peak.
    pub angular: f64,
    /// False when the peak sits at the lowest scanned frequency, i.e. the
    /// series relaxes without a resolvable oscillation.
    pub interior_peak: bool,
}

/// Dominant angular frequency of a uniformly sampled series, from the
/// Fourier peak of its finite-difference derivative. Differentiating removes
/// the zero-frequency weight of the relaxation toward the steady value.
pub fn dominant_frequency(times: &[f64], values: &[f64]) -> Option<FrequencyEstimate> {
    if times.len() < 8 || times.len() != values.len() {
        return None;
    }
    let h = times[1] - times[0];
    if !(h > 0.0) || times.windows(2).any(|w| ((w[1] - w[0]) - h).abs() > 1e-9 * h) {
        return None;
    }
    let deriv: Vec<f64> = values.windows(2).map(|w| (w[1] - w[0]) / h).collect();
    let span = h * deriv.len() as f64;
    let step = 2.0 * std::f64::consts::PI / (16.0 * span);
    let nyquist = std::f64::consts::PI / h;
    let count = (nyquist / step).floor() as usize;
    let power = |w: f64| {
        let rot = Complex64::from_polar(1.0, w * h);
        let mut phase = Complex64::new(1.0, 0.0);
        let mut acc = Complex64::new(0.0, 0.0);
        for d in &deriv {
            acc += phase * *d;
            phase *= rot;
        }
        acc.norm()
    };
    let spectrum: Vec<f64> = (1..=count).map(|j| power(j as f64 * step)).collect();
    let (best, _) = spectrum
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (j, v)| if *v > acc.1 { (j, *v) } else { acc });
    Some(FrequencyEstimate {
        angular: (best + 1) as f64 * step,
        interior_peak: best > 0 && best + 1 < spectrum.len(),
    })
}

/// Largest change of the observables between successive depths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthDelta {
    pub from: usize,
    pub to: usize,
    pub max_delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncationReport {
    pub depths: Vec<usize>,
    pub deltas: Vec<DepthDelta>,
    pub tolerance: f64,
    pub converged: bool,
}

fn max_delta(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Reruns the configuration at each depth (in parallel) and compares.
pub fn truncation_sweep(config: &RunConfig, depths: &[usize]) -> Result<TruncationReport> {
    let mut depths = depths.to_vec();
    depths.sort_unstable();
    depths.dedup();
    if depths.len() < 2 {
        return Err(Error::Config("an L-sweep needs at least two distinct depths".into()));
    }
    let observables = depths
        .par_iter()
        .map(|&l| {
            let p = Pipeline::with_depth(config, l)?;
            Ok(simulate(&p)?.observables())
        })
        .collect::<Result<Vec<_>>>()?;
    let deltas: Vec<DepthDelta> = depths
        .windows(2)
        .zip(observables.windows(2))
        .map(|(l, o)| DepthDelta {
            from: l[0],
            to: l[1],
            max_delta: max_delta(&o[0], &o[1]),
        })
        .collect();
    let tolerance = config.hierarchy.convergence_tolerance;
    Ok(TruncationReport {
        converged: deltas.iter().all(|d| d.max_delta <= tolerance),
        depths,
        deltas,
        tolerance,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatisticsSummary {
    pub raw: Vec<f64>,
    pub mean: f64,
    pub sigma: Option<f64>,
    pub sigma_ratio: Option<f64>,
    pub skewness: Option<f64>,
    pub kurtosis: Option<f64>,
}

impl StatisticsSummary {
    fn new(s: &Statistics, sigma0: Option<f64>) -> Self {
        Self {
            raw: s.raw.clone(),
            mean: s.raw[0],
            sigma: s.sigma,
            sigma_ratio: s.sigma.zip(sigma0).map(|(a, b)| a / b),
            skewness: s.skewness,
            kurtosis: s.kurtosis,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SteadySummary {
    pub time: f64,
    pub residual: f64,
    pub converged: bool,
    pub populations: Vec<f64>,
    pub statistics: Option<StatisticsSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecurrenceSummary {
    pub max_tier: usize,
    pub equilibrium: f64,
    /// Only for H_S = Vσx, Q = σz.
    pub spin_boson_closure: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldSummary {
    pub dims: Vec<usize>,
    pub points: usize,
    pub imag_residue: f64,
    pub balance_residual: Option<f64>,
    pub balance_discretization: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema_version: u32,
    pub config: RunConfig,
    pub assumptions: Vec<String>,
    pub modes: usize,
    pub operators: usize,
    pub depth: usize,
    pub dt: f64,
    pub samples: usize,
    pub max_trace_error: f64,
    pub max_hermiticity_defect: f64,
    pub initial: Option<StatisticsSummary>,
    pub last_sample: Option<StatisticsSummary>,
    pub steady_state: Option<SteadySummary>,
    /// Dominant angular frequency of ⟨F(t)⟩ and its ratio to Ω_S when the
    /// model defines one.
    pub dominant_frequency: Option<FrequencyEstimate>,
    pub frequency_over_omega_s: Option<f64>,
    pub truncation: Option<TruncationReport>,
    pub recurrences: Option<RecurrenceSummary>,
    pub field: Option<FieldSummary>,
    /// Reasons the run is convergence-inconclusive; empty when it is not.
    pub inconclusive: Vec<String>,
}

pub fn assumptions(config: &RunConfig) -> Vec<String> {
    let mut out = vec![format!("energies in units of {}", config.energy_unit)];
    match &config.model {
        ModelConfig::ElectronTransfer { epsilon, coupling, .. } => {
            out.push(format!(
                "epsilon = {epsilon} taken so that sqrt(epsilon^2 + 4 V^2) = {} sets the energy unit",
                models::system_frequency(*epsilon, *coupling)
            ));
            out.push("temperature and the fixed coupling strength of the sweep are assumed, not given".into());
        }
        ModelConfig::SpinBoson { .. } => out.push("spin-boson convention H = (eps/2) sz + V sx, Q = sz".into()),
        ModelConfig::PureDephasing { .. } => out.push("independent-boson model H = (eps/2) sz, Q = sz".into()),
        ModelConfig::Custom { .. } => {}
    }
    if config.initial_state.is_none() {
        out.push(match config.model {
            ModelConfig::PureDephasing { .. } => "initial state |+><+| (default)".into(),
            ModelConfig::ElectronTransfer { .. } => "initial state donor |0><0| (default)".into(),
            _ => "initial state |0><0| (default)".into(),
        });
    }
    out.push(format!(
        "bath correlation truncated after {} Matsubara terms",
        config.bath.n_matsubara
    ));
    out
}

fn omega_s(config: &RunConfig) -> Option<f64> {
    match config.model {
        ModelConfig::ElectronTransfer { epsilon, coupling, .. } | ModelConfig::SpinBoson { epsilon, coupling } => {
            Some(models::system_frequency(epsilon, coupling))
        }
        _ => None,
    }
}

/// In-memory run: propagation plus every requested analysis, no files.
pub struct RunResult {
    pub pipeline: Pipeline,
    pub simulation: Simulation,
    pub summary: RunSummary,
    pub field: Option<field::FieldSlice>,
}

pub fn execute(config: &RunConfig, l_sweep: Option<&[usize]>) -> Result<RunResult> {
    let p = Pipeline::new(config)?;
    let sim = simulate(&p)?;
    let mut inconclusive = Vec::new();

    let sigma0 = sim.initial_sigma();
    let initial = sim
        .records
        .first()
        .and_then(|r| r.statistics.as_ref())
        .map(|s| StatisticsSummary::new(s, sigma0));
    let last_sample = sim
        .records
        .last()
        .and_then(|r| r.statistics.as_ref())
        .map(|s| StatisticsSummary::new(s, sigma0));
    let steady_state = sim.steady.as_ref().map(|st| {
        let rho = st.store.reduced();
        SteadySummary {
            time: st.time,
            residual: st.residual,
            converged: st.converged,
            populations: (0..rho.nrows()).map(|i| rho[(i, i)].re).collect(),
            statistics: sim.steady_statistics.as_ref().map(|s| StatisticsSummary::new(s, sigma0)),
        }
    });
    if let Some(s) = &steady_state {
        if !s.converged {
            inconclusive.push(format!(
                "steady state not reached by t = {} (residual {:.3e})",
                s.time, s.residual
            ));
        }
    }

    let dominant = sim.mean_series().and_then(|(t, f)| dominant_frequency(&t, &f));
    let ratio = dominant.zip(omega_s(config)).map(|(d, w)| d.angular / w);

    let truncation = match l_sweep {
        Some(depths) => {
            let report = truncation_sweep(config, depths)?;
            if !report.converged {
                inconclusive.push(format!(
                    "observables change by more than {:.1e} across depths {:?}",
                    report.tolerance, report.depths
                ));
            }
            Some(report)
        }
        None => None,
    };

    let terminal = sim.terminal_store();
    let recurrences = match config.outputs.recurrences {
        Some(max_tier) => {
            let eq = field::equilibrium_recurrence_residual(terminal, &p.modes, p.model.coupling(), max_tier)?
                .iter()
                .map(|r| r.residual)
                .fold(0.0, f64::max);
            let closure = match field::spin_boson_tunnelling(&p.model) {
                Ok(_) => Some(field::spin_boson_closure_residual(terminal, &p.modes, &p.model, max_tier)?),
                Err(_) => None,
            };
            Some(RecurrenceSummary {
                max_tier,
                equilibrium: eq,
                spin_boson_closure: closure,
            })
        }
        None => None,
    };

    let (field_summary, slice) = match &config.outputs.field {
        Some(fc) => {
            let axis = field::uniform_grid(-fc.half_width, fc.half_width, fc.points);
            let axes = vec![axis; fc.dims.len()];
            let slice = field::reconstruct(
                terminal,
                &p.modes,
                &fc.dims,
                &axes,
                Some(p.model.coupling()),
                fc.keep_operator,
            )?;
            let (residual, disc) = match fc.balance_tolerance {
                Some(tol) => {
                    let r = field::smoluchowski_residual(terminal, &p.modes, p.model.coupling(), &fc.dims, &axes, tol)?;
                    if r.inconclusive {
                        inconclusive.push(format!(
                            "field balance discretization estimate {:.3e} exceeds {tol:.1e}",
                            r.discretization
                        ));
                    }
                    (Some(r.residual), Some(r.discretization))
                }
                None => (None, None),
            };
            (
                Some(FieldSummary {
                    dims: fc.dims.clone(),
                    points: fc.points,
                    imag_residue: slice.imag_residue(),
                    balance_residual: residual,
                    balance_discretization: disc,
                }),
                Some(slice),
            )
        }
        None => (None, None),
    };

    let summary = RunSummary {
        schema_version: super::config::SCHEMA_VERSION,
        config: config.clone(),
        assumptions: assumptions(config),
        modes: p.modes.len(),
        operators: p.deom.hierarchy().len(),
        depth: p.deom.hierarchy().depth(),
        dt: p.settings.dt,
        samples: sim.records.len(),
        max_trace_error: sim.max_trace_error(),
        max_hermiticity_defect: sim.max_hermiticity_defect(),
        initial,
        last_sample,
        steady_state,
        dominant_frequency: dominant,
        frequency_over_omega_s: ratio,
        truncation,
        recurrences,
        field: field_summary,
        inconclusive,
    };
    Ok(RunResult {
        pipeline: p,
        simulation: sim,
        summary,
        field: slice,
    })
}

/// Decimal text with 17 significant digits.
pub fn fmt17(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else {
        format!("{x:.16e}")
    }
}

pub fn write_moments_csv<W: Write>(records: &[Record], mut out: W) -> Result<()> {
    writeln!(out, "{}", MOMENT_COLUMNS.join(","))?;
    for r in records {
        let mut row = vec![fmt17(r.t)];
        let s = r.statistics.as_ref();
        for n in 0..4 {
            row.push(fmt17(s.and_then(|s| s.raw.get(n).copied()).unwrap_or(f64::NAN)));
        }
        for v in [s.and_then(|s| s.sigma), s.and_then(|s| s.skewness), s.and_then(|s| s.kurtosis)] {
            row.push(fmt17(v.unwrap_or(f64::NAN)));
        }
        row.push(fmt17(r.trace_err));
        row.push(fmt17(r.herm_err));
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn write_reduced_csv<W: Write>(records: &[Record], mut out: W) -> Result<()> {
    let Some(first) = records.first() else {
        return Ok(());
    };
    let d = first.reduced.nrows();
    let mut header = vec!["t".to_string()];
    for r in 0..d {
        for c in 0..d {
            header.push(format!("rho_{r}{c}_re"));
            header.push(format!("rho_{r}{c}_im"));
        }
    }
    writeln!(out, "{}", header.join(","))?;
    for rec in records {
        let mut row = vec![fmt17(rec.t)];
        for r in 0..d {
            for c in 0..d {
                row.push(fmt17(rec.reduced[(r, c)].re));
                row.push(fmt17(rec.reduced[(r, c)].im));
            }
        }
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

/// Files written by a run; removed again unless [`OutputSet::keep`] is called.
pub struct OutputSet {
    dir: PathBuf,
    created_dir: bool,
    files: Vec<PathBuf>,
    keep: bool,
}

impl OutputSet {
    pub fn new(dir: &Path) -> Result<Self> {
        let created_dir = !dir.exists();
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            created_dir,
            files: Vec::new(),
            keep: false,
        })
    }

    pub fn write<F>(&mut self, name: &str, body: F) -> Result<PathBuf>
    where
        F: FnOnce(&mut BufWriter<File>) -> Result<()>,
    {
        let path = self.dir.join(name);
        self.files.push(path.clone());
        let mut w = BufWriter::new(File::create(&path)?);
        body(&mut w)?;
        w.flush()?;
        Ok(path)
    }

    pub fn files(&self) -> &[PathBuf] {
        &self.files
    }

    pub fn keep(mut self) -> Vec<PathBuf> {
        self.keep = true;
        std::mem::take(&mut self.files)
    }
}

impl Drop for OutputSet {
    fn drop(&mut self) {
        if self.keep {
            return;
        }
        for f in &self.files {
            let _ = std::fs::remove_file(f);
        }
        if self.created_dir {
            let _ = std::fs::remove_dir(&self.dir);
        }
    }
}

pub fn write_summary<W: Write, T: Serialize>(value: &T, mut out: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

/// Runs the configuration and writes `moments.csv` (when moments were
/// requested), `reduced.csv`, `field.csv`, `final.ckpt` and `summary.json`
/// into `out`. On error every file written so far is removed.
pub fn run(config: &RunConfig, out: &Path, l_sweep: Option<&[usize]>) -> Result<RunSummary> {
    let mut files = OutputSet::new(out)?;
    let result = execute(config, l_sweep)?;
    if config.outputs.moments.is_some() {
        files.write("moments.csv", |w| write_moments_csv(&result.simulation.records, w))?;
    }
    files.write("reduced.csv", |w| write_reduced_csv(&result.simulation.records, w))?;
    if let Some(slice) = &result.field {
        files.write("field.csv", |w| slice.write_csv(w))?;
    }
    if config.outputs.checkpoint {
        files.write("final.ckpt", |w| result.simulation.terminal_store().write_checkpoint(w))?;
    }
    files.write("summary.json", |w| write_summary(&result.summary, w))?;
    files.keep();
    Ok(result.summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frequency_of_damped_cosine() {
        let t: Vec<f64> = (0..800).map(|i| i as f64 * 0.05).collect();
        let f: Vec<f64> = t.iter().map(|t| 0.3 + (-0.1 * t).exp() * (1.3 * t).cos()).collect();
        let est = dominant_frequency(&t, &f).unwrap();
        assert!(est.interior_peak);
        assert!((est.angular - 1.3).abs() < 0.02, "{:?}", est);
    }

    #[test]
    fn monotone_relaxation_has_no_interior_peak() {
        let t: Vec<f64> = (0..800).map(|i| i as f64 * 0.05).collect();
        let f: Vec<f64> = t.iter().map(|t| 1.0 - (-0.5 * t).exp()).collect();
        assert!(!dominant_frequency(&t, &f).unwrap().interior_peak);
    }

    #[test]
    fn irregular_sampling_is_rejected() {
        let t = [0.0, 0.1, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];
        assert!(dominant_frequency(&t, &[0.0; 9]).is_none());
    }

    #[test]
    fn seventeen_digits() {
        let s = fmt17(0.1);
        assert_eq!(s, "1.0000000000000001e-1");
        assert_eq!(s.parse::<f64>().unwrap(), 0.1);
        assert_eq!(fmt17(f64::NAN), "nan");
    }

    #[test]
    fn output_set_cleans_up() {
        let dir = tempfile::tempdir().unwrap();
        let target = dir.path().join("sub");
        {
            let mut set = OutputSet::new(&target).unwrap();
            set.write("a.txt", |w| Ok(writeln!(w, "x")?)).unwrap();
            assert!(target.join("a.txt").exists());
        }
        assert!(!target.exists());
        let mut set = OutputSet::new(&target).unwrap();
        set.write("a.txt", |w| Ok(writeln!(w, "x")?)).unwrap();
        set.keep();
        assert!(target.join("a.txt").exists());
    }
}
