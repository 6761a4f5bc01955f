//! Stationary-state identities on propagated hierarchies.

use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;

use dqme::bathcorr::{decompose_correlation, DissipatonModeSet, SpectralDensity};
use dqme::field::{
    balance_rate, equilibrium_recurrence_residual, operator_moment_residual, pauli, reconstruct,
    smoluchowski_residual, spin_boson_closure_residual, uniform_grid,
};
use dqme::harness::models;
use dqme::hierarchy::{DdoStore, Hierarchy};
use dqme::moments::x_operators;
use dqme::propagator::{Deom, PropagationSettings, SystemModel};

fn c(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

fn steady(model: &SystemModel, modes: &DissipatonModeSet, depth: usize) -> DdoStore {
    let h = Arc::new(Hierarchy::new(modes.len(), depth).unwrap());
    let deom = Deom::new(model.clone(), modes.clone(), h).unwrap();
    let ss = deom.steady_state(0.02, 1e-11, 2000.0).unwrap();
    assert!(ss.converged, "residual {:e}", ss.residual);
    ss.store
}

fn bo_spin_boson() -> (SystemModel, DissipatonModeSet, DdoStore) {
    let model = models::spin_boson(0.0, 0.5).unwrap();
    let modes = decompose_correlation(&SpectralDensity::brownian(0.2, 1.0, 1.0), 1.0, 1).unwrap();
    let store = steady(&model, &modes, 8);
    (model, modes, store)
}

#[test]
fn spin_boson_relations_hold_at_steady_state() {
    let (model, modes, store) = bo_spin_boson();
    let rec = equilibrium_recurrence_residual(&store, &modes, model.coupling(), 2).unwrap();
    assert!(rec.iter().all(|r| r.residual < 1e-9), "{rec:?}");
    assert!(spin_boson_closure_residual(&store, &modes, &model, 2).unwrap() < 1e-9);
    for a in pauli() {
        let r = operator_moment_residual(&store, &modes, &model, &a, 3).unwrap();
        assert!(r.iter().all(|x| x.residual < 1e-9));
    }
    // ⟨σy⟩ vanishes in the stationary state of H = Vσx
    let [_, sy, _] = pauli();
    assert!((&sy * store.reduced()).trace().norm() < 1e-10);
}

#[test]
fn flipped_closure_signs_do_not_hold() {
    // the σx and σz rows with the ζ and V terms of opposite sign
    let (_, modes, store) = bo_spin_boson();
    let v = 0.5;
    let [sx, sy, sz] = pauli();
    let x = x_operators(&store, &modes).unwrap();
    let h = store.hierarchy();
    let tr = |m: &DMatrix<Complex64>, j: usize| (m * x.matrix(j)).trace();
    let mut worst: f64 = 0.0;
    for i in h.tier_range(1).chain(h.tier_range(0)) {
        let occ = h.occupations(i);
        let mut up = c(0.0);
        let mut low = c(0.0);
        let mut gx = c(0.0);
        let mut gz = c(0.0);
        for (k, m) in modes.modes.iter().enumerate() {
            let n = occ[k] as f64;
            up += m.zeta * tr(&sy, h.raised(i, k).unwrap());
            if occ[k] > 0 {
                low += m.xi * n * x.trace(h.lowered(i, k).unwrap());
                gx += m.gamma * n * tr(&sx, i);
                gz += m.gamma * n * tr(&sz, i);
            }
        }
        worst = worst.max((2.0 * up - gx).norm());
        worst = worst.max((-2.0 * v * tr(&sy, i) + 2.0 * low - gz).norm());
    }
    assert!(worst > 1e-2, "{worst}");
}

#[test]
fn smoluchowski_balance_on_drude_mode() {
    let model = models::spin_boson(0.0, 0.5).unwrap();
    let modes = decompose_correlation(&SpectralDensity::drude(0.2, 1.0), 0.5, 0).unwrap();
    let store = steady(&model, &modes, 10);
    let axes = vec![uniform_grid(-6.0, 6.0, 401)];
    let r = smoluchowski_residual(&store, &modes, model.coupling(), &[0], &axes, 5e-3).unwrap();
    assert!(!r.inconclusive);
    assert!(r.residual < 1e-5, "{r:?}");
    let rec = equilibrium_recurrence_residual(&store, &modes, model.coupling(), 2).unwrap();
    assert!(rec.iter().all(|r| r.residual < 1e-9));
}

#[test]
fn field_evolves_by_the_smoluchowski_generator() {
    // ∂P/∂t from the hierarchy equals Σ Γ̂P − Σ ∂J at a transient time
    let model = models::spin_boson(0.0, 0.5).unwrap();
    let modes = decompose_correlation(&SpectralDensity::drude(0.2, 1.0), 0.5, 0).unwrap();
    let h = Arc::new(Hierarchy::new(1, 14).unwrap());
    let deom = Deom::new(model.clone(), modes.clone(), h.clone()).unwrap();
    let rho0 = DMatrix::from_row_slice(2, 2, &[c(1.0), c(0.0), c(0.0), c(0.0)]);
    let init = deom.initial_state(&rho0).unwrap();
    let state = deom.propagate(init, &PropagationSettings::rk4(0.01, 1.0, 100), |_, _| Ok(())).unwrap();
    let mut deriv = DdoStore::zeros(h, 2);
    deom.rhs(&state, &mut deriv).unwrap();

    let axes = vec![uniform_grid(-6.0, 6.0, 601)];
    let slice = reconstruct(&state, &modes, &[0], &axes, Some(model.coupling()), false).unwrap();
    let dpdt = reconstruct(&deriv, &modes, &[0], &axes, None, false).unwrap();
    let predicted = balance_rate(&slice, &modes).unwrap();
    let scale = dpdt.density.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let worst = predicted
        .iter()
        .zip(&dpdt.density)
        .filter_map(|(p, d)| p.map(|p| (p - d).norm()))
        .fold(0.0, f64::max);
    assert!(scale > 1e-3);
    assert!(worst / scale < 1e-5, "{} / {scale}", worst);
}
