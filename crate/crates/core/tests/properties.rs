//! Configuration round-trips and unit-rescaling invariance.

use proptest::prelude::*;

use dqme::harness::config::RunConfig;
use dqme::harness::run::{simulate, Pipeline};

fn config(epsilon: f64, coupling: f64, lambda: f64, beta: f64, depth: usize) -> RunConfig {
    RunConfig::from_json(&format!(
        r#"{{
          "schema_version": 1,
          "model": {{ "kind": "spin_boson", "epsilon": {epsilon}, "coupling": {coupling} }},
          "bath": {{
            "spectral_density": {{ "kind": "BrownianOscillator", "lambda": {lambda}, "omega0": 1.0, "damping": 1.0 }},
            "beta": {beta},
            "n_matsubara": 1
          }},
          "hierarchy": {{ "depth": {depth} }},
          "integrator": {{ "dt": 0.01, "t_end": 1.0, "sample_every": 10 }},
          "outputs": {{ "moments": {{ "n_max": 4 }}, "steady_state": {{ "tolerance": 1e-9, "t_max": 50.0 }} }}
        }}"#
    ))
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn config_json_round_trip(
        eps in -2.0f64..2.0,
        v in 0.01f64..2.0,
        lambda in 0.0f64..2.0,
        beta in 0.1f64..5.0,
        depth in 4usize..12,
    ) {
        let cfg = config(eps, v, lambda, beta, depth);
        let back = RunConfig::from_json(&cfg.to_json().unwrap()).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.to_json().unwrap(), cfg.to_json().unwrap());
    }

    #[test]
    fn rescaling_round_trips(c in 0.1f64..10.0) {
        let cfg = config(0.3, 0.5, 0.4, 1.0, 5);
        let back = cfg.rescaled(c).unwrap().rescaled(1.0 / c).unwrap();
        prop_assert!((back.bath.beta - cfg.bath.beta).abs() < 1e-12);
        prop_assert!((back.integrator.t_end - cfg.integrator.t_end).abs() < 1e-12);
    }
}

#[test]
fn dimensionless_statistics_do_not_depend_on_the_unit() {
    let cfg = config(0.3, 0.5, 0.4, 1.0, 5);
    let base = simulate(&Pipeline::new(&cfg).unwrap()).unwrap();
    for c in [0.5, 3.0] {
        let s = simulate(&Pipeline::new(&cfg.rescaled(c).unwrap()).unwrap()).unwrap();
        assert_eq!(s.records.len(), base.records.len());
        let (s0, b0) = (s.initial_sigma().unwrap(), base.initial_sigma().unwrap());
        assert!((s0 / b0 - c).abs() < 1e-9 * c);
        for (x, y) in base.records.iter().zip(&s.records) {
            assert!((x.t - y.t * c).abs() < 1e-9);
            let (a, b) = (x.statistics.as_ref().unwrap(), y.statistics.as_ref().unwrap());
            assert!((a.skewness.unwrap() - b.skewness.unwrap()).abs() < 1e-9);
            assert!((a.kurtosis.unwrap() - b.kurtosis.unwrap()).abs() < 1e-9);
            assert!((a.sigma.unwrap() / b0 - b.sigma.unwrap() / s0).abs() < 1e-9);
            assert!((x.trace_err - y.trace_err).abs() < 1e-12);
            assert!((x.reduced.clone() - y.reduced.clone()).norm() < 1e-9);
        }
        let (a, b) = (base.steady.as_ref().unwrap(), s.steady.as_ref().unwrap());
        assert!(a.converged && b.converged);
        assert!((a.store.reduced() - b.store.reduced()).norm() < 1e-8);
    }
}
