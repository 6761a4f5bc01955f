//! Built-in system models and their default initial states.

use nalgebra::DMatrix;
use num_complex::Complex64;

use super::config::{ModelConfig, RunConfig};
use crate::propagator::SystemModel;
use crate::{Error, Result};

fn c(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

fn two_level(h: [f64; 4], q: [f64; 4]) -> Result<SystemModel> {
    SystemModel::new(
        DMatrix::from_row_slice(2, 2, &h.map(c)),
        DMatrix::from_row_slice(2, 2, &q.map(c)),
    )
}

/// Electron-transfer model with donor |0⟩ and acceptor |1⟩.
pub fn electron_transfer(epsilon: f64, coupling: f64, lambda: f64) -> Result<SystemModel> {
    two_level([0.0, coupling, coupling, epsilon + lambda], [0.0, 0.0, 0.0, -1.0])
}

pub fn spin_boson(epsilon: f64, coupling: f64) -> Result<SystemModel> {
    two_level([epsilon / 2.0, coupling, coupling, -epsilon / 2.0], [1.0, 0.0, 0.0, -1.0])
}

pub fn pure_dephasing(epsilon: f64) -> Result<SystemModel> {
    two_level([epsilon / 2.0, 0.0, 0.0, -epsilon / 2.0], [1.0, 0.0, 0.0, -1.0])
}

/// √(ε² + 4V²), the energy unit of the electron-transfer figures.
pub fn system_frequency(epsilon: f64, coupling: f64) -> f64 {
    (epsilon * epsilon + 4.0 * coupling * coupling).sqrt()
}

pub fn build_model(config: &RunConfig) -> Result<SystemModel> {
    let model = match &config.model {
        ModelConfig::ElectronTransfer {
            epsilon,
            coupling,
            lambda,
        } => {
            let bath_lambda = config.bath.spectral_density.reorganization_energy();
            let lambda = lambda.unwrap_or(bath_lambda);
            if (lambda - bath_lambda).abs() > 1e-12 * bath_lambda.abs().max(1.0) {
                return Err(Error::Config(format!(
                    "model lambda {lambda} differs from the bath reorganization energy {bath_lambda}"
                )));
            }
            electron_transfer(*epsilon, *coupling, lambda)
        }
        ModelConfig::SpinBoson { epsilon, coupling } => spin_boson(*epsilon, *coupling),
        ModelConfig::PureDephasing { epsilon } => pure_dephasing(*epsilon),
        ModelConfig::Custom { hamiltonian, coupling } => {
            SystemModel::new(hamiltonian.to_matrix("hamiltonian")?, coupling.to_matrix("coupling")?)
        }
    };
    model.map_err(|e| Error::Config(e.to_string()))
}

/// Donor state |0⟩⟨0| for electron transfer and spin–boson, |+⟩⟨+| for pure
/// dephasing, |0⟩⟨0| for custom models.
pub fn default_initial_state(config: &RunConfig, dim: usize) -> DMatrix<Complex64> {
    match config.model {
        ModelConfig::PureDephasing { .. } => DMatrix::from_element(2, 2, c(0.5)),
        _ => {
            let mut rho = DMatrix::zeros(dim, dim);
            rho[(0, 0)] = c(1.0);
            rho
        }
    }
}

pub fn initial_state(config: &RunConfig, dim: usize) -> Result<DMatrix<Complex64>> {
    match &config.initial_state {
        Some(m) => {
            let rho = m.to_matrix("initial_state")?;
            if rho.nrows() != dim {
                return Err(Error::Config(format!(
                    "initial_state is {}x{}, model is {dim}-dimensional",
                    rho.nrows(),
                    rho.ncols()
                )));
            }
            Ok(rho)
        }
        None => Ok(default_initial_state(config, dim)),
    }
}
