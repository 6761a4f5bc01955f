//! End-to-end checks of the `dqme` binary.

use std::path::Path;
use std::process::{Command, Output};

use dqme::bathcorr::DissipatonModeSet;
use dqme::harness::run::MOMENT_COLUMNS;

fn dqme(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dqme")).args(args).output().unwrap()
}

fn small_config(dt: f64, depth: usize, extra_outputs: &str) -> String {
    format!(
        r#"{{
          "schema_version": 1,
          "model": {{ "kind": "electron_transfer", "epsilon": 0.6, "coupling": 0.4 }},
          "bath": {{
            "spectral_density": {{ "kind": "BrownianOscillator", "lambda": 0.5, "omega0": 1.0, "damping": 1.0 }},
            "beta": 1.0,
            "n_matsubara": 1
          }},
          "hierarchy": {{ "depth": {depth} }},
          "integrator": {{ "dt": {dt}, "t_end": 2.0, "sample_every": 5 }},
          "outputs": {{ "moments": {{ "n_max": 4 }}{extra_outputs} }}
        }}"#
    )
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn run_writes_bundle_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", &small_config(0.01, 5, r#", "checkpoint": true"#));
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = dqme(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["moments.csv", "reduced.csv", "final.ckpt", "summary.json"] {
        let x = std::fs::read(a.join(f)).unwrap();
        let y = std::fs::read(b.join(f)).unwrap();
        assert_eq!(x, y, "{f} differs between identical runs");
    }
    let csv = std::fs::read_to_string(a.join("moments.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), MOMENT_COLUMNS.join(","));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 41);
    let first: Vec<f64> = rows[0].split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(first[0], 0.0);
    assert!(first[6].abs() < 1e-12 && first[7].abs() < 1e-12);
}

#[test]
fn config_errors_exit_2_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let bad = write(dir.path(), "bad.json", "{ not json");
    let o = dqme(&["run", "--config", &bad, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());

    let wrong_version = small_config(0.01, 5, "").replace("\"schema_version\": 1", "\"schema_version\": 9");
    let cfg = write(dir.path(), "v.json", &wrong_version);
    assert_eq!(dqme(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]).status.code(), Some(2));

    let shallow = write(dir.path(), "s.json", &small_config(0.01, 3, ""));
    let o = dqme(&["run", "--config", &shallow, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("depth"));

    let missing = dir.path().join("nope.json");
    assert_eq!(
        dqme(&["run", "--config", missing.to_str().unwrap(), "--out", out.to_str().unwrap()]).status.code(),
        Some(2)
    );
    assert!(!out.exists());
}

#[test]
fn numerical_failure_exits_3_and_cleans_up() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    // explicit RK4 far outside its stability region
    let cfg = write(dir.path(), "c.json", &small_config(1.0, 6, "").replace("\"t_end\": 2.0", "\"t_end\": 400.0"));
    let o = dqme(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("diverged"));
    assert!(!out.exists());
}

#[test]
fn unconverged_l_sweep_exits_4_with_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write(dir.path(), "c.json", &small_config(0.01, 4, ""));
    let o = dqme(&["run", "--config", &cfg, "--out", out.to_str().unwrap(), "--l-sweep", "4,5"]);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["truncation"]["converged"], false);
    assert!(summary["truncation"]["deltas"][0]["max_delta"].as_f64().unwrap() > 1e-6);
}

#[test]
fn decompose_writes_mode_set() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", &small_config(0.01, 5, ""));
    let out = dir.path().join("out");
    let o = dqme(&["decompose", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let modes = DissipatonModeSet::from_json(&std::fs::read_to_string(out.join("modes.json")).unwrap()).unwrap();
    assert_eq!(modes.len(), 3);
    let rep: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("decomposition.json")).unwrap()).unwrap();
    assert!(rep["reconstruction_error"].as_f64().unwrap() < 0.1);
}

#[test]
fn oracle_field_and_sweep_commands() {
    let dir = tempfile::tempdir().unwrap();
    let deph = r#"{
      "schema_version": 1,
      "model": { "kind": "pure_dephasing", "epsilon": 1.0 },
      "bath": { "spectral_density": { "kind": "BrownianOscillator", "lambda": 0.05, "omega0": 1.0, "damping": 1.0 },
                "beta": 1.0, "n_matsubara": 1 },
      "hierarchy": { "depth": 5 },
      "integrator": { "dt": 0.01, "t_end": 2.0, "sample_every": 10 }
    }"#;
    let cfg = write(dir.path(), "d.json", deph);
    let out = dir.path().join("oracle");
    assert!(dqme(&["oracle", "--config", &cfg, "--out", out.to_str().unwrap()]).status.success());
    assert_eq!(std::fs::read_to_string(out.join("oracle.csv")).unwrap().lines().count(), 22);

    let fcfg = write(
        dir.path(),
        "f.json",
        &small_config(0.01, 5, "")
            .replace(
                r#"{ "kind": "BrownianOscillator", "lambda": 0.5, "omega0": 1.0, "damping": 1.0 }"#,
                r#"{ "kind": "DrudeLorentz", "lambda": 0.5, "cutoff": 1.0 }"#,
            )
            .replace(r#"{ "moments": { "n_max": 4 } }"#, "{}")
            .replace("\"n_matsubara\": 1", "\"n_matsubara\": 0"),
    );
    let out = dir.path().join("field");
    let o = dqme(&["field", "--config", &fcfg, "--out", out.to_str().unwrap(), "--seed", "7"]);
    // a transient state does not satisfy the stationary balance, only the
    // field files are checked here
    assert!(o.status.code() == Some(0) || o.status.code() == Some(4));
    let field = std::fs::read_to_string(out.join("field.csv")).unwrap();
    assert!(field.starts_with("x0,P,P_im"));
    assert_eq!(field.lines().count(), 402);

    let sweep = format!(
        r#"{{ "schema_version": 1, "name": "t", "parameter": "beta", "values": [0.5, 1.0], "base": {} }}"#,
        small_config(0.01, 5, "")
    );
    let scfg = write(dir.path(), "s.json", &sweep);
    let out = dir.path().join("sweep");
    assert!(dqme(&["sweep", "--config", &scfg, "--out", out.to_str().unwrap()]).status.success());
    assert_eq!(std::fs::read_to_string(out.join("sweep.csv")).unwrap().lines().count(), 3);
    assert!(out.join("point_1").join("moments.csv").exists());
}
