use std::path::Path;
use std::process::{Command, Output};

use bdsde_harness::RunManifest;

const BIN: &str = env!("CARGO_BIN_EXE_bdsde");

const SMALL: &str = r#"
[experiment]
kind = "qv-check"

[kernel]
family = "constant"
q0 = 1.0

[coefficients]
family = "ornstein_uhlenbeck"
theta = 1.0
sigma = 1.0

[grid]
horizon = 1.0
steps = 256
paths = 8
realizations = 16
probes = [0.5]

[seeds]
master = 5
"#;

fn bdsde(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn run_cfg(sub: &[&str], cfg: &str, out: &Path) -> Output {
    let mut args: Vec<&str> = sub.to_vec();
    args.extend(["--config", cfg, "--out-dir", out.to_str().unwrap()]);
    bdsde(&args)
}

#[test]
fn passing_run_exits_zero_and_writes_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "qv.toml", SMALL);
    let out = dir.path().join("run");
    let o = run_cfg(&["qv-check", "--plots"], &cfg, &out);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let m = RunManifest::read(&out).unwrap();
    assert!(m.pass);
    assert_eq!(m.assertions[0].name, "qv_relative_error");
    assert_eq!(m.assertions[0].threshold, 0.05);
    assert!(m.outputs.iter().any(|f| f.path == "qv.csv"));
    assert!(std::fs::metadata(out.join("qv_ratio.svg")).unwrap().len() > 0);
}

#[test]
fn malformed_config_exits_two_and_names_the_keys() {
    let dir = tempfile::tempdir().unwrap();
    let bad = SMALL.replace("steps = 256", "steps = 256\nstpes = 3").replace("paths = 8", "paths = 1");
    let cfg = write(dir.path(), "bad.toml", &bad);
    let o = run_cfg(&["qv-check"], &cfg, &dir.path().join("run"));
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("grid.stpes"), "{err}");
    assert!(err.contains("grid.paths"), "{err}");
}

#[test]
fn unknown_kind_and_unresolved_names_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "kind.toml", &SMALL.replace("qv-check", "qv-chek"));
    assert_eq!(run_cfg(&["qv-check"], &cfg, &dir.path().join("a")).status.code(), Some(2));
    let cfg = write(dir.path(), "fam.toml", &SMALL.replace("family = \"constant\"", "family = \"matern\""));
    assert_eq!(run_cfg(&["qv-check"], &cfg, &dir.path().join("b")).status.code(), Some(2));
    let cfg = write(dir.path(), "mismatch.toml", SMALL);
    let o = run_cfg(&["picard"], &cfg, &dir.path().join("c"));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn tolerance_violation_exits_four() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "tight.toml", &format!("{SMALL}\n[tolerances]\nqv_rel = 1e-12\n"));
    let out = dir.path().join("run");
    let o = run_cfg(&["qv-check"], &cfg, &out);
    assert_eq!(o.status.code(), Some(4));
    let m = RunManifest::read(&out).unwrap();
    assert!(!m.pass);
    assert_eq!(m.failures().count(), 1);
}

#[test]
fn numerical_failure_exits_three() {
    // The inner fixed point of the implicit step diverges once rate * dt > 1.
    let text = r#"
[experiment]
kind = "solve-bdsde"
n_inner = 400

[kernel]
family = "constant"
q0 = 0.1

[coefficients]
family = "brownian"

[driver]
f = "-500*y"

[terminal]
family = "constant"
value = 1.0

[grid]
horizon = 1.0
steps = 10
paths = 100

[seeds]
master = 1
"#;
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "stiff.toml", text);
    let o = run_cfg(&["solve-bdsde"], &cfg, &dir.path().join("run"));
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn seed_override_changes_outputs_and_rerun_reproduces_them() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "qv.toml", SMALL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(run_cfg(&["qv-check"], &cfg, &a).status.code(), Some(0));
    let mut args = vec!["qv-check", "--seed", "6", "--jobs", "1"];
    args.extend(["--config", &cfg, "--out-dir", b.to_str().unwrap()]);
    assert_eq!(bdsde(&args).status.code(), Some(0));
    let (ma, mb) = (RunManifest::read(&a).unwrap(), RunManifest::read(&b).unwrap());
    assert_eq!(mb.seeds.master, 6);
    assert_ne!(ma.output_mismatches(&mb), Vec::<String>::new());

    let c = dir.path().join("c");
    let o = bdsde(&["rerun", "--manifest", b.join("manifest.json").to_str().unwrap(), "--out-dir", c.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    assert_eq!(std::fs::read(b.join("qv.csv")).unwrap(), std::fs::read(c.join("qv.csv")).unwrap());
}

#[test]
fn plot_command_needs_the_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "qv.toml", SMALL);
    let out = dir.path().join("run");
    assert_eq!(run_cfg(&["qv-check"], &cfg, &out).status.code(), Some(0));
    let o = bdsde(&["plot", "--manifest", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    std::fs::remove_file(out.join("qv.csv")).unwrap();
    let o = bdsde(&["plot", "--manifest", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
}
