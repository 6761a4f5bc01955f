//! Parameter sweeps run as independent parallel jobs.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ModelConfig, RunConfig, SCHEMA_VERSION};
use super::run::{self, fmt17, OutputSet, RunSummary};
use crate::bathcorr::SpectralDensity;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    /// Reorganization energy of the bath (and of the electron-transfer model).
    Lambda,
    Beta,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub schema_version: u32,
    pub name: String,
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
    pub base: RunConfig,
}

impl SweepConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.values.is_empty() {
            return Err(Error::Config("sweep has no values".into()));
        }
        for i in 0..self.values.len() {
            self.point(i)?.validate()?;
        }
        Ok(())
    }

    /// Configuration of the `i`-th sweep point.
    pub fn point(&self, i: usize) -> Result<RunConfig> {
        let v = *self
            .values
            .get(i)
            .ok_or_else(|| Error::Config(format!("sweep point {i} out of range")))?;
        let mut cfg = self.base.clone();
        match self.parameter {
            SweepParameter::Lambda => {
                cfg.bath.spectral_density = match cfg.bath.spectral_density {
                    SpectralDensity::BrownianOscillator { omega0, damping, .. } => {
                        SpectralDensity::brownian(v, omega0, damping)
                    }
                    SpectralDensity::DrudeLorentz { cutoff, .. } => SpectralDensity::drude(v, cutoff),
                };
                if let ModelConfig::ElectronTransfer { lambda, .. } = &mut cfg.model {
                    if lambda.is_some() {
                        *lambda = Some(v);
                    }
                }
            }
            SweepParameter::Beta => cfg.bath.beta = v,
        }
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    /// Steady-state values when the base requests a steady state, otherwise
    /// values at the last sample.
    pub mean: Option<f64>,
    pub sigma_ratio: Option<f64>,
    pub skewness: Option<f64>,
    pub kurtosis: Option<f64>,
    pub frequency: Option<f64>,
    pub frequency_over_omega_s: Option<f64>,
    pub interior_peak: Option<bool>,
    pub max_trace_error: f64,
    pub max_hermiticity_defect: f64,
}

impl SweepRow {
    fn new(value: f64, s: &RunSummary) -> Self {
        let stats = s
            .steady_state
            .as_ref()
            .and_then(|st| st.statistics.as_ref())
            .or(s.last_sample.as_ref());
        Self {
            value,
            mean: stats.map(|x| x.mean),
            sigma_ratio: stats.and_then(|x| x.sigma_ratio),
            skewness: stats.and_then(|x| x.skewness),
            kurtosis: stats.and_then(|x| x.kurtosis),
            frequency: s.dominant_frequency.map(|f| f.angular),
            frequency_over_omega_s: s.frequency_over_omega_s,
            interior_peak: s.dominant_frequency.map(|f| f.interior_peak),
            max_trace_error: s.max_trace_error,
            max_hermiticity_defect: s.max_hermiticity_defect,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub name: String,
    pub parameter: SweepParameter,
    pub rows: Vec<SweepRow>,
    pub runs: Vec<RunSummary>,
}

impl SweepReport {
    pub fn inconclusive(&self) -> Vec<String> {
        self.runs
            .iter()
            .zip(&self.rows)
            .flat_map(|(r, row)| r.inconclusive.iter().map(move |m| format!("{} = {}: {m}", self.param_name(), row.value)))
            .collect()
    }

    fn param_name(&self) -> &'static str {
        match self.parameter {
            SweepParameter::Lambda => "lambda",
            SweepParameter::Beta => "beta",
        }
    }
}

/// Runs every point; with `out`, each point writes a full run bundle into
/// `out/point_<i>` and the sweep adds `sweep.csv` and `sweep.json`.
pub fn run_sweep(cfg: &SweepConfig, out: Option<&Path>, l_sweep: Option<&[usize]>) -> Result<SweepReport> {
    cfg.validate()?;
    let mut files = match out {
        Some(dir) => Some(OutputSet::new(dir)?),
        None => None,
    };
    let runs = (0..cfg.values.len())
        .into_par_iter()
        .map(|i| {
            let point = cfg.point(i)?;
            match out {
                Some(dir) => run::run(&point, &dir.join(format!("point_{i}")), l_sweep),
                None => Ok(run::execute(&point, l_sweep)?.summary),
            }
        })
        .collect::<Vec<Result<RunSummary>>>();
    let runs = match runs.into_iter().collect::<Result<Vec<_>>>() {
        Ok(r) => r,
        Err(e) => {
            if let Some(dir) = out {
                for i in 0..cfg.values.len() {
                    let _ = std::fs::remove_dir_all(dir.join(format!("point_{i}")));
                }
            }
            return Err(e);
        }
    };
    let rows: Vec<SweepRow> = cfg.values.iter().zip(&runs).map(|(v, s)| SweepRow::new(*v, s)).collect();
    let report = SweepReport {
        name: cfg.name.clone(),
        parameter: cfg.parameter,
        rows,
        runs,
    };
    if let Some(files) = &mut files {
        files.write("sweep.csv", |w| write_sweep_csv(&report, w))?;
        files.write("sweep.json", |w| run::write_summary(&report, w))?;
    }
    if let Some(files) = files {
        files.keep();
    }
    Ok(report)
}

pub fn write_sweep_csv<W: std::io::Write>(report: &SweepReport, mut w: W) -> Result<()> {
    writeln!(
        w,
        "{},F_mean,sigma_ratio,skewness,kurtosis,frequency,frequency_over_omega_s,max_trace_err,max_herm_err",
        report.param_name()
    )?;
    let o = |v: Option<f64>| fmt17(v.unwrap_or(f64::NAN));
    for r in &report.rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            fmt17(r.value),
            o(r.mean),
            o(r.sigma_ratio),
            o(r.skewness),
            o(r.kurtosis),
            o(r.frequency),
            o(r.frequency_over_omega_s),
            fmt17(r.max_trace_error),
            fmt17(r.max_hermiticity_defect)
        )?;
    }
    Ok(())
}

/// True when every value exists and each exceeds its predecessor.
pub fn strictly_increasing(values: &[Option<f64>]) -> bool {
    values.iter().all(Option::is_some)
        && values
            .windows(2)
            .all(|w| matches!((w[0], w[1]), (Some(a), Some(b)) if b > a))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn monotonicity() {
        assert!(strictly_increasing(&[Some(1.0), Some(2.0), Some(2.5)]));
        assert!(!strictly_increasing(&[Some(1.0), Some(1.0)]));
        assert!(!strictly_increasing(&[Some(1.0), None]));
    }
}
