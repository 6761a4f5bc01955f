//! Independent-boson model against the exact cumulant decay.

use dqme::bathcorr::{fdt_correlation, SpectralDensity};
use dqme::harness::config::RunConfig;
use dqme::harness::oracle::{compare_pure_dephasing, pure_dephasing_coherence};
use dqme::harness::run::{simulate, Pipeline};
use dqme::quadrature::QuadratureOptions;

fn config(lambda: f64, depth: usize, n_matsubara: usize, dt: f64, t_end: f64) -> RunConfig {
    RunConfig::from_json(&format!(
        r#"{{
          "schema_version": 1,
          "model": {{ "kind": "pure_dephasing", "epsilon": 1.0 }},
          "bath": {{
            "spectral_density": {{ "kind": "BrownianOscillator", "lambda": {lambda}, "omega0": 1.0, "damping": 1.0 }},
            "beta": 1.0,
            "n_matsubara": {n_matsubara}
          }},
          "hierarchy": {{ "depth": {depth} }},
          "integrator": {{ "dt": {dt}, "t_end": {t_end}, "sample_every": 1 }}
        }}"#
    ))
    .unwrap()
}

#[test]
fn short_time_prefactor_matches_propagator() {
    // at small t the exponent is 2⟨F²⟩t², independent of the Matsubara tail
    // up to O(t³); compare the propagated decay with the oracle there
    let cfg = config(1.0, 4, 5, 1e-4, 0.02);
    let cmp = compare_pure_dephasing(&cfg).unwrap();
    for ((t, d), e) in cmp.times.iter().zip(&cmp.deom).zip(&cmp.exact).skip(1) {
        let g_deom = -(d / 0.5).ln();
        let g_exact = -(e / 0.5).ln();
        assert!((g_deom / g_exact - 1.0).abs() < 2e-3, "t={t}: {g_deom} vs {g_exact}");
    }
    let c0 = fdt_correlation(&cfg.bath.spectral_density, 1.0, &[0.0], &QuadratureOptions::default()).unwrap()[0].re;
    let t = *cmp.times.last().unwrap();
    let g = -(cmp.exact.last().unwrap() / 0.5).ln();
    assert!((g / (2.0 * c0 * t * t) - 1.0).abs() < 1e-3);
}

#[test]
fn populations_stay_put() {
    let p = Pipeline::new(&config(0.5, 6, 1, 0.01, 3.0)).unwrap();
    let sim = simulate(&p).unwrap();
    for r in &sim.records {
        assert!((r.reduced[(0, 0)].re - 0.5).abs() < 1e-13);
        assert!((r.reduced[(1, 1)].re - 0.5).abs() < 1e-13);
    }
}

#[test]
fn no_coupling_keeps_full_coherence() {
    let cfg = config(0.0, 3, 1, 0.01, 5.0);
    let cmp = compare_pure_dephasing(&cfg).unwrap();
    assert!(cmp.deom.iter().all(|x| (x - 0.5).abs() < 1e-9));
    let exact = pure_dephasing_coherence(&SpectralDensity::brownian(0.0, 1.0, 1.0), 1.0, 0.5, &[5.0], &QuadratureOptions::default())
        .unwrap();
    assert_eq!(exact[0], 0.5);
}

#[test]
fn weak_coupling_converges_quickly() {
    let cmp = compare_pure_dephasing(&config(0.05, 6, 2, 0.01, 10.0)).unwrap();
    assert!(cmp.max_deviation < 1e-4, "{}", cmp.max_deviation);
}

#[test]
fn other_models_are_rejected() {
    let mut cfg = config(0.5, 3, 1, 0.01, 1.0);
    cfg.model = dqme::harness::config::ModelConfig::SpinBoson {
        epsilon: 0.0,
        coupling: 1.0,
    };
    assert!(matches!(compare_pure_dephasing(&cfg), Err(dqme::Error::Config(_))));
}
