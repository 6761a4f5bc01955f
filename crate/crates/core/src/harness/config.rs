//! Versioned JSON run configuration.

use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::bathcorr::SpectralDensity;
use crate::propagator::Integrator;
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Matrix entry: a bare real number or a `[re, im]` pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Entry {
    Real(f64),
    Complex([f64; 2]),
}

impl Entry {
    fn value(self) -> Complex64 {
        match self {
            Entry::Real(x) => Complex64::new(x, 0.0),
            Entry::Complex([re, im]) => Complex64::new(re, im),
        }
    }
}

/// Row-major square matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixSpec(pub Vec<Vec<Entry>>);

impl MatrixSpec {
    pub fn to_matrix(&self, what: &str) -> Result<DMatrix<Complex64>> {
        let n = self.0.len();
        if n == 0 {
            return Err(Error::Config(format!("{what} is empty")));
        }
        if let Some(r) = self.0.iter().position(|row| row.len() != n) {
            return Err(Error::Config(format!("{what} row {r} has {} entries, expected {n}", self.0[r].len())));
        }
        Ok(DMatrix::from_fn(n, n, |r, c| self.0[r][c].value()))
    }

    pub fn from_matrix(m: &DMatrix<Complex64>) -> Self {
        Self(
            (0..m.nrows())
                .map(|r| {
                    (0..m.ncols())
                        .map(|c| {
                            let z = m[(r, c)];
                            if z.im == 0.0 {
                                Entry::Real(z.re)
                            } else {
                                Entry::Complex([z.re, z.im])
                            }
                        })
                        .collect()
                })
                .collect(),
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelConfig {
    /// H = (ε+λ)|1⟩⟨1| + V(|1⟩⟨0| + |0⟩⟨1|), Q = −|1⟩⟨1|. When `lambda` is
    /// omitted the reorganization energy of the bath is used.
    ElectronTransfer {
        epsilon: f64,
        coupling: f64,
        #[serde(default)]
        lambda: Option<f64>,
    },
    /// H = (ε/2)σz + Vσx, Q = σz.
    SpinBoson { epsilon: f64, coupling: f64 },
    /// H = (ε/2)σz, Q = σz.
    PureDephasing { epsilon: f64 },
    Custom { hamiltonian: MatrixSpec, coupling: MatrixSpec },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BathConfig {
    pub spectral_density: SpectralDensity,
    pub beta: f64,
    pub n_matsubara: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HierarchyConfig {
    pub depth: usize,
    #[serde(default)]
    pub filter_threshold: Option<f64>,
    #[serde(default)]
    pub max_operators: Option<usize>,
    /// Largest accepted change of observables between successive depths of an
    /// L-sweep.
    #[serde(default = "default_convergence_tolerance")]
    pub convergence_tolerance: f64,
}

fn default_convergence_tolerance() -> f64 {
    1e-6
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Rk4,
    Rk45,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    #[serde(default = "default_scheme")]
    pub scheme: Scheme,
    /// Step size; when omitted a step is derived from the bath rates and ‖H‖.
    #[serde(default)]
    pub dt: Option<f64>,
    pub t_end: f64,
    #[serde(default = "default_stride")]
    pub sample_every: usize,
    #[serde(default = "default_rtol")]
    pub rtol: f64,
    #[serde(default = "default_atol")]
    pub atol: f64,
}

fn default_scheme() -> Scheme {
    Scheme::Rk4
}

fn default_stride() -> usize {
    1
}

fn default_rtol() -> f64 {
    1e-8
}

fn default_atol() -> f64 {
    1e-10
}

impl IntegratorConfig {
    pub fn integrator(&self) -> Integrator {
        match self.scheme {
            Scheme::Rk4 => Integrator::Rk4,
            Scheme::Rk45 => Integrator::Rk45 {
                rtol: self.rtol,
                atol: self.atol,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentsOutput {
    pub n_max: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldOutput {
    /// Modes kept as field variables; the rest are traced out.
    pub dims: Vec<usize>,
    #[serde(default = "default_points")]
    pub points: usize,
    #[serde(default = "default_half_width")]
    pub half_width: f64,
    #[serde(default)]
    pub keep_operator: bool,
    /// Normalized Smoluchowski residual accepted at the final state.
    #[serde(default)]
    pub balance_tolerance: Option<f64>,
}

fn default_points() -> usize {
    crate::field::DEFAULT_POINTS
}

fn default_half_width() -> f64 {
    crate::field::DEFAULT_HALF_WIDTH
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SteadyStateOutput {
    #[serde(default = "default_steady_tol")]
    pub tolerance: f64,
    pub t_max: f64,
}

fn default_steady_tol() -> f64 {
    1e-10
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OutputConfig {
    #[serde(default)]
    pub moments: Option<MomentsOutput>,
    #[serde(default)]
    pub field: Option<FieldOutput>,
    /// Highest tier checked by the steady-state recurrences.
    #[serde(default)]
    pub recurrences: Option<usize>,
    #[serde(default)]
    pub checkpoint: bool,
    /// Continue from the final sample until the hierarchy is stationary and
    /// report statistics there.
    #[serde(default)]
    pub steady_state: Option<SteadyStateOutput>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default = "default_unit")]
    pub energy_unit: String,
    pub model: ModelConfig,
    pub bath: BathConfig,
    pub hierarchy: HierarchyConfig,
    pub integrator: IntegratorConfig,
    #[serde(default)]
    pub initial_state: Option<MatrixSpec>,
    #[serde(default)]
    pub outputs: OutputConfig,
}

fn default_unit() -> String {
    "Omega_S".into()
}

fn positive(x: f64, what: &str) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} must be positive and finite, got {x}")))
    }
}

fn finite(x: f64, what: &str) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} must be finite, got {x}")))
    }
}

impl RunConfig {
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

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        match &self.model {
            ModelConfig::ElectronTransfer {
                epsilon,
                coupling,
                lambda,
            } => {
                finite(*epsilon, "epsilon")?;
                finite(*coupling, "coupling")?;
                if let Some(l) = lambda {
                    finite(*l, "lambda")?;
                }
            }
            ModelConfig::SpinBoson { epsilon, coupling } => {
                finite(*epsilon, "epsilon")?;
                finite(*coupling, "coupling")?;
            }
            ModelConfig::PureDephasing { epsilon } => finite(*epsilon, "epsilon")?,
            ModelConfig::Custom { hamiltonian, coupling } => {
                let h = hamiltonian.to_matrix("hamiltonian")?;
                let q = coupling.to_matrix("coupling")?;
                if h.nrows() != q.nrows() {
                    return Err(Error::Config("hamiltonian and coupling differ in size".into()));
                }
            }
        }
        self.bath
            .spectral_density
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        positive(self.bath.beta, "beta")?;
        if self.hierarchy.depth == 0 {
            return Err(Error::Config("hierarchy depth must be at least 1".into()));
        }
        if let Some(th) = self.hierarchy.filter_threshold {
            positive(th, "filter_threshold")?;
        }
        positive(self.hierarchy.convergence_tolerance, "convergence_tolerance")?;
        positive(self.integrator.t_end, "t_end")?;
        if let Some(dt) = self.integrator.dt {
            positive(dt, "dt")?;
        }
        if self.integrator.sample_every == 0 {
            return Err(Error::Config("sample_every must be at least 1".into()));
        }
        if self.integrator.scheme == Scheme::Rk45 {
            positive(self.integrator.rtol, "rtol")?;
            positive(self.integrator.atol, "atol")?;
        }
        if let Some(m) = &self.outputs.moments {
            if m.n_max == 0 || m.n_max > 4 {
                return Err(Error::Config(format!("moments n_max must lie in 1..=4, got {}", m.n_max)));
            }
            if m.n_max > self.hierarchy.depth {
                return Err(Error::Config(format!(
                    "moments up to order {} need hierarchy depth >= {}, got {}",
                    m.n_max, m.n_max, self.hierarchy.depth
                )));
            }
        }
        if let Some(f) = &self.outputs.field {
            if f.dims.is_empty() {
                return Err(Error::Config("field output needs at least one mode".into()));
            }
            if f.points < 2 {
                return Err(Error::Config("field grid needs at least two points".into()));
            }
            positive(f.half_width, "field half_width")?;
        }
        if let Some(t) = self.outputs.recurrences {
            if t + 1 > self.hierarchy.depth {
                return Err(Error::Config(format!(
                    "recurrences up to tier {t} need hierarchy depth >= {}",
                    t + 1
                )));
            }
        }
        if let Some(s) = &self.outputs.steady_state {
            positive(s.tolerance, "steady_state tolerance")?;
            positive(s.t_max, "steady_state t_max")?;
        }
        Ok(())
    }

    /// Same physics in units where every energy (and 1/β) is multiplied by
    /// `c` and every time divided by `c`.
    pub fn rescaled(&self, c: f64) -> Result<Self> {
        positive(c, "scale factor")?;
        let mut out = self.clone();
        out.model = match &self.model {
            ModelConfig::ElectronTransfer {
                epsilon,
                coupling,
                lambda,
            } => ModelConfig::ElectronTransfer {
                epsilon: epsilon * c,
                coupling: coupling * c,
                lambda: lambda.map(|l| l * c),
            },
            ModelConfig::SpinBoson { epsilon, coupling } => ModelConfig::SpinBoson {
                epsilon: epsilon * c,
                coupling: coupling * c,
            },
            ModelConfig::PureDephasing { epsilon } => ModelConfig::PureDephasing { epsilon: epsilon * c },
            ModelConfig::Custom { hamiltonian, coupling } => {
                let h = hamiltonian.to_matrix("hamiltonian")? * Complex64::new(c, 0.0);
                ModelConfig::Custom {
                    hamiltonian: MatrixSpec::from_matrix(&h),
                    coupling: coupling.clone(),
                }
            }
        };
        out.bath.spectral_density = self.bath.spectral_density.scaled(c);
        out.bath.beta = self.bath.beta / c;
        out.integrator.dt = self.integrator.dt.map(|dt| dt / c);
        out.integrator.t_end = self.integrator.t_end / c;
        if let Some(s) = &mut out.outputs.steady_state {
            s.t_max /= c;
            s.tolerance *= c;
        }
        Ok(out)
    }
}
