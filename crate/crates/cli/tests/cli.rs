use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn dklab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dklab")).args(args).env("DK_THREADS", "1").output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, cfg: &Value) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    p
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Strip the header and return data lines.
fn csv_rows(p: &Path) -> Vec<Vec<f64>> {
    fs::read_to_string(p)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

#[test]
fn kernel_spectrum_starts_at_one() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("spec");
    let cfg = json!({"experiment": "kernel-spectrum", "epsilon": 0.2, "seed": 1, "output_dir": out});
    let o = dklab(&["run", write_config(tmp.path(), "c.json", &cfg).to_str().unwrap(), "--check"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = csv_rows(&out.join("spectrum.csv"));
    assert_eq!(rows[0][0], 0.0);
    assert_eq!(rows[0][1], 1.0);
    assert!(rows.windows(2).all(|w| w[1][1] <= w[0][1]));
    let side = read_json(&out.join("spectrum.meta.json"));
    assert_eq!(side["meta"]["seed"], 1);
    assert_eq!(side["epsilon"], 0.2);
}

#[test]
fn noiseless_spde_from_constant_state_stays_constant() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("spde");
    let cfg = json!({
        "experiment": "spde", "epsilon": 0.25, "theta": 8, "sigma": 0.0, "delta": 0.1,
        "m_trunc": 16, "T": 0.05, "dt": 0.01, "seed": 3, "output_dir": out,
        "rho0": {"mean": 1.0}
    });
    let o = dklab(&["run", write_config(tmp.path(), "c.json", &cfg).to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = csv_rows(&out.join("trajectory.csv"));
    let times: std::collections::BTreeSet<u64> = rows.iter().map(|r| r[0].to_bits()).collect();
    assert!(times.len() >= 2);
    for r in &rows {
        assert!((r[2] - 1.0).abs() < 1e-12, "rho = {}", r[2]);
        assert!(r[3].abs() < 1e-12, "j = {}", r[3]);
    }
}

#[test]
fn same_config_and_seed_give_identical_files() {
    let tmp = tempfile::tempdir().unwrap();
    let mut bodies = Vec::new();
    for run in ["a", "b"] {
        let out = tmp.path().join(run);
        let cfg = json!({
            "experiment": "fields", "epsilon": 0.2, "big_n": 200, "T": 0.1, "dt": 0.01,
            "grid": {"kind": "line", "x_min": 0.0, "x_max": 6.283185307179586, "n_cells": 257},
            "seed": 11, "output_dir": out
        });
        let o = dklab(&["run", write_config(tmp.path(), &format!("{run}.json"), &cfg).to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        bodies.push(fs::read(out.join("density.csv")).unwrap());
        let m = read_json(&out.join("manifest.json"));
        bodies.push(serde_json::to_vec(&m["files"]).unwrap());
    }
    assert_eq!(bodies[0], bodies[2]);
    assert_eq!(bodies[1], bodies[3]);
}

#[test]
fn particle_run_records_n_and_seed_everywhere() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("p");
    let cfg = json!({
        "experiment": "particles", "epsilon": 0.5, "theta": 2, "T": 0.02, "dt": 0.01,
        "seed": 5, "output_dir": out, "snapshots": 2
    });
    let o = dklab(&["run", write_config(tmp.path(), "c.json", &cfg).to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m = read_json(&out.join("manifest.json"));
    for f in m["files"].as_array().unwrap() {
        let name = f["path"].as_str().unwrap();
        if name.ends_with(".json") {
            let v = read_json(&out.join(name));
            assert_eq!(v["meta"]["seed"], 5, "{name}");
            assert_eq!(v["meta"]["N"], json!([4]), "{name}");
            assert_eq!(v["meta"]["n_from_scaling"], true);
        }
    }
    let rows = csv_rows(&out.join("trajectory.csv"));
    assert_eq!(rows.len(), 3 * 4);
}

#[test]
fn manifest_verifies() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let cfg = json!({
        "experiment": "inverse-moment", "epsilon": 0.3, "theta": 3, "n_paths": 20,
        "T": 0.2, "seed": 9, "output_dir": out
    });
    assert_eq!(code(&dklab(&["run", write_config(tmp.path(), "c.json", &cfg).to_str().unwrap()])), 0);
    let o = dklab(&["verify", out.join("manifest.json").to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(!out.join(".verify").exists());

    let mut m = read_json(&out.join("manifest.json"));
    m["files"][0]["sha256"] = json!("00");
    fs::write(out.join("manifest.json"), serde_json::to_string(&m).unwrap()).unwrap();
    assert_eq!(code(&dklab(&["verify", out.join("manifest.json").to_str().unwrap()])), 3);
}

#[test]
fn unknown_field_is_a_config_error_with_a_line_number() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path().join("bad.json");
    fs::write(&p, "{\n  \"experiment\": \"spde\",\n  \"epsilon\": 0.2,\n  \"sede\": 1,\n  \"output_dir\": \"x\"\n}\n").unwrap();
    let o = dklab(&["run", p.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    let e = stderr(&o);
    assert!(e.contains("sede") && e.contains("line 4"), "{e}");
}

#[test]
fn semantic_errors_name_the_field_and_line() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path().join("bad.json");
    fs::write(&p, "{\n  \"experiment\": \"covariance\",\n  \"epsilon\": -0.2,\n  \"seed\": 1,\n  \"output_dir\": \"x\"\n}\n").unwrap();
    let o = dklab(&["run", p.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    let e = stderr(&o);
    assert!(e.contains("epsilon") && e.contains("line 3"), "{e}");
}

#[test]
fn empty_sweep_list_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = json!({"experiment": "kernel-spectrum", "epsilon": [], "seed": 1, "output_dir": tmp.path().join("o")});
    let o = dklab(&["sweep", write_config(tmp.path(), "c.json", &cfg).to_str().unwrap()]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    let cfg = json!({"experiment": "kernel-spectrum", "epsilon": 0.2, "seed": [], "output_dir": tmp.path().join("o")});
    let o = dklab(&["sweep", write_config(tmp.path(), "d.json", &cfg).to_str().unwrap()]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn two_seeds_by_two_epsilons_give_four_manifests_and_one_aggregate() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sw");
    let cfg = json!({
        "experiment": "inverse-moment", "epsilon": [0.4, 0.3], "theta": 3, "n_paths": 10,
        "T": 0.1, "seed": [1, 2], "output_dir": out
    });
    let o = dklab(&["sweep", write_config(tmp.path(), "c.json", &cfg).to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let mut manifests = 0;
    for cell in fs::read_dir(out.join("cells")).unwrap() {
        if cell.unwrap().path().join("manifest.json").exists() {
            manifests += 1;
        }
    }
    assert_eq!(manifests, 4);
    let agg = read_json(&out.join("sweep.json"));
    assert_eq!(agg["n_cells"], 4);
    assert_eq!(agg["n_failed"], 0);
    assert_eq!(agg["fits"].as_array().unwrap().len(), 2);
    assert_eq!(agg["envelopes"].as_array().unwrap().len(), 2);
    assert_eq!(agg["trends"].as_array().unwrap().len(), 1);
}

#[test]
fn epsilon_list_experiments_keep_the_list_in_one_cell() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("vs");
    let cfg = json!({
        "experiment": "variance-scaling", "epsilon": [0.5, 0.4, 0.3], "theta": 3.5, "n_paths": 20,
        "T": 0.1, "seed": 4, "output_dir": out
    });
    let o = dklab(&["sweep", write_config(tmp.path(), "c.json", &cfg).to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let agg = read_json(&out.join("sweep.json"));
    assert_eq!(agg["n_cells"], 1);
    let cell = out.join("cells").join("theta3.5_seed4");
    let rep = read_json(&cell.join("variance_scaling.json"));
    assert_eq!(rep["report"]["z"]["epsilons"], json!([0.5, 0.4, 0.3]));
    assert_eq!(rep["meta"]["N"], json!([11, 25, 68]));
}

#[test]
fn failed_cell_makes_the_sweep_fail() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("f");
    // j_max = 20 is below 1/(2 eps^2) = 50 for the smaller epsilon only.
    let cfg = json!({"experiment": "kernel-spectrum", "epsilon": [0.5, 0.1], "j_max": 20, "seed": 1, "output_dir": out});
    let o = dklab(&["sweep", write_config(tmp.path(), "c.json", &cfg).to_str().unwrap()]);
    assert_ne!(code(&o), 0);
    let agg = read_json(&out.join("sweep.json"));
    assert_eq!(agg["n_failed"], 1);
    assert!(agg["cells"][1]["error"].is_string());
    assert!(agg["cells"][0]["summary"].is_object());
}

#[test]
fn check_flag_turns_threshold_misses_into_exit_4() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("pos");
    // Huge noise at tiny N: the density crosses delta on most paths.
    let cfg = json!({
        "experiment": "positivity", "epsilon": 0.5, "big_n": 1, "delta": 0.9, "m_trunc": 8,
        "T": 0.2, "dt": 0.01, "n_paths": 20, "seed": 2, "output_dir": out
    });
    let p = write_config(tmp.path(), "c.json", &cfg);
    let o = dklab(&["run", p.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = dklab(&["run", p.to_str().unwrap(), "--check"]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
}

#[test]
fn numerical_failures_exit_3_and_name_the_module() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = json!({"experiment": "kernel-spectrum", "epsilon": 0.5, "j_max": 10, "seed": 1, "output_dir": tmp.path().join("o")});
    let o = dklab(&["run", write_config(tmp.path(), "c.json", &cfg).to_str().unwrap()]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("periodic_kernel"));
}

#[test]
fn schema_is_json_and_covers_every_config_field() {
    let o = dklab(&["schema"]);
    assert_eq!(code(&o), 0);
    let schema: Value = serde_json::from_slice(&o.stdout).unwrap();
    let props = schema["properties"].as_object().unwrap();
    for field in ["experiment", "theta", "epsilon", "big_n", "gamma", "sigma", "delta", "potential", "grid", "dt", "T", "n_paths", "seed", "output_dir"] {
        assert!(props.contains_key(field), "{field}");
    }
    assert_eq!(schema["additionalProperties"], false);
}

#[test]
fn version_lists_both_packages() {
    let o = dklab(&["version"]);
    assert_eq!(code(&o), 0);
    let s = String::from_utf8_lossy(&o.stdout);
    assert!(s.contains("dklab ") && s.contains("dklab-cli "));
}

#[test]
fn bad_thread_count_is_a_config_error() {
    let o = Command::new(env!("CARGO_BIN_EXE_dklab")).args(["run", "nope.json"]).env("DK_THREADS", "zero").output().unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn shipped_example_configs_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let mut n = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "json") {
            let o = dklab(&["validate", p.to_str().unwrap()]);
            assert_eq!(code(&o), 0, "{}: {}", p.display(), stderr(&o));
            let v = read_json(&p);
            assert!(v["output_dir"].as_str().unwrap().starts_with("out/"), "{}", p.display());
            n += 1;
        }
    }
    assert!(n >= 5);
}
