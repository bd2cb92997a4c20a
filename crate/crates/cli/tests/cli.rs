use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn lmfg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lmfg")).args(args).output().expect("spawn lmfg")
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn write_config(dir: &Path, v: &Value) -> PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p
}

fn run(cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![cmd, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    lmfg(&args)
}

fn verdicts(out: &Path) -> Vec<Value> {
    let text = std::fs::read_to_string(out.join("verdicts.json")).unwrap();
    serde_json::from_str::<Value>(&text).unwrap().as_array().unwrap().clone()
}

fn verdict<'a>(vs: &'a [Value], name: &str) -> &'a Value {
    vs.iter().find(|v| v["name"] == name).unwrap_or_else(|| panic!("no verdict {name}"))
}

fn small_game() -> Value {
    json!({
        "scenario": "small",
        "operator": "frac{1.5}",
        "grid": {"n": 64, "half_width": 4.0},
        "time": {"horizon": 0.5, "steps": 32},
        "coupling": {"f": {"type": "conv", "phi": "gauss(0.5)"}, "g": {"type": "conv", "phi": "gauss(0.7)"}},
        "m0": {"bumps": [{"centre": [0.2], "sigma": 0.4}]}
    })
}

#[test]
fn odd_coupling_passes_m1_and_fails_m2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = run("check", &configs().join("check_odd.json"), &out, &[]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
    let vs = verdicts(&out);
    assert_eq!(verdict(&vs, "M1")["pass"], true);
    assert_eq!(verdict(&vs, "M2")["pass"], false);
    for v in &vs {
        for key in ["name", "value", "tolerance", "pass", "paper_anchor"] {
            assert!(v.get(key).is_some(), "verdict missing {key}: {v}");
        }
    }
}

#[test]
fn positive_definite_couplings_pass_check() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = run("check", &configs().join("check_gauss.json"), &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    assert!(out.join("check_report.json").exists());
}

#[test]
fn laplacian_kernel_slope_verdict() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = run("kernel", &configs().join("kernel_laplacian.json"), &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(out.join("kernel_report.json")).unwrap()).unwrap();
    let first = &report[0];
    assert_eq!(first["beta"], 1);
    assert!((first["slope"].as_f64().unwrap() + 0.5).abs() <= 0.02);
    assert!(first.get("K_hat").is_some());
    let fields = levy_mfg::io::read_fields(&mut std::fs::File::open(out.join("kernel_fields.lmfg")).unwrap()).unwrap();
    assert_eq!(fields.len(), 2);
    assert!((fields[1].integral() - 1.0).abs() < 1e-10);
}

#[test]
fn missing_operator_exits_2_without_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = small_game();
    v.as_object_mut().unwrap().remove("operator");
    let cfg = write_config(dir.path(), &v);
    let out = dir.path().join("out");
    let o = run("mfg", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("operator"));
    assert!(!out.exists());
}

#[test]
fn unknown_key_and_bad_profile_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let mut v = small_game();
    v["solver"] = json!({"dampin": 0.3});
    assert_eq!(run("mfg", &write_config(dir.path(), &v), &out, &[]).status.code(), Some(2));
    let mut v = small_game();
    v["coupling"]["f"]["phi"] = json!("triangle(1)");
    assert_eq!(run("mfg", &write_config(dir.path(), &v), &out, &[]).status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn step_budget_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = small_game();
    v["grid"]["n"] = json!(512);
    v["time"]["steps"] = json!(8);
    let o = run("mfg", &write_config(dir.path(), &v), &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn mfg_artifacts_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &small_game());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(run("mfg", &cfg, &a, &["--threads", "2", "--seed", "7"]).status.code(), Some(0));
    assert_eq!(run("mfg", &cfg, &b, &["--threads", "2", "--seed", "7"]).status.code(), Some(0));
    for f in ["u.lmfg", "m.lmfg", "gaps.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    let bytes = std::fs::read(a.join("m.lmfg")).unwrap();
    assert_eq!(&bytes[..4], b"LMFG");
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
    assert_eq!(bytes[8], 1);
    let slices = levy_mfg::io::read_fields(&mut bytes.as_slice()).unwrap();
    assert_eq!(slices.len(), 33);
    let gaps = std::fs::read_to_string(a.join("gaps.csv")).unwrap();
    assert!(gaps.starts_with("iteration,gap\n"));
}

#[test]
fn strict_mode_turns_boundary_warning_into_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("fp_drift.json");
    let lax = run("fp", &cfg, &dir.path().join("lax"), &[]);
    assert_eq!(lax.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&lax.stderr).contains("boundary-shell"));
    let strict = run("fp", &cfg, &dir.path().join("strict"), &["--strict"]);
    assert_eq!(strict.status.code(), Some(1));
    let vs = verdicts(&dir.path().join("strict"));
    assert_eq!(verdict(&vs, "warnings")["pass"], false);
}

#[test]
fn hjb_writes_trajectory_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = run("hjb", &configs().join("hjb_cole_hopf.json"), &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("hjb_norms.csv")).unwrap();
    assert!(csv.starts_with("t,sup,sup_grad,sup_hess,l1\n"));
    assert_eq!(csv.lines().count(), 402);
}

#[test]
fn m0_from_binary_file() {
    let dir = tempfile::tempdir().unwrap();
    let g = levy_mfg::grid::Grid::line(64, 4.0).unwrap();
    let m = levy_mfg::grid::Field::from_fn(&g, |p| (-2.0 * p[0] * p[0]).exp());
    let m = m.scale(1.0 / m.integral());
    levy_mfg::io::write_field(&mut std::fs::File::create(dir.path().join("m0.lmfg")).unwrap(), &m).unwrap();
    let mut v = small_game();
    v["m0"] = json!({"file": "m0.lmfg"});
    let o = run("mfg", &write_config(dir.path(), &v), &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let mut v = small_game();
    v["grid"]["n"] = json!(128);
    v["m0"] = json!({"file": "m0.lmfg"});
    let o = run("mfg", &write_config(dir.path(), &v), &dir.path().join("out2"), &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn schema_lists_every_top_level_key() {
    let schema: Value =
        serde_json::from_str(&std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("schema/run_config.schema.json")).unwrap())
            .unwrap();
    let props = schema["properties"].as_object().unwrap();
    for key in [
        "scenario", "operator", "grid", "time", "hamiltonian", "coupling", "m0", "solver", "tolerances", "kernel", "hjb", "fp", "linsys",
        "master", "check", "output", "seed",
    ] {
        assert!(props.contains_key(key), "schema lacks {key}");
    }
    assert_eq!(schema["additionalProperties"], false);
    for entry in std::fs::read_dir(configs()).unwrap() {
        let text = std::fs::read_to_string(entry.unwrap().path()).unwrap();
        let v: Value = serde_json::from_str(&text).unwrap();
        for k in v.as_object().unwrap().keys() {
            assert!(props.contains_key(k), "example uses undeclared key {k}");
        }
    }
}
