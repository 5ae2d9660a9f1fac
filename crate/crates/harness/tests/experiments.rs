//! Library-level runs of the experiment kinds on small grids.

use std::path::Path;

use bdsde_harness::plots::emit_plots;
use bdsde_harness::{run, ExperimentConfig, RunManifest};

fn parse(text: &str) -> ExperimentConfig {
    ExperimentConfig::parse(text).unwrap()
}

fn bytes(dir: &Path, m: &RunManifest) -> Vec<Vec<u8>> {
    m.outputs.iter().map(|o| std::fs::read(dir.join(&o.path)).unwrap()).collect()
}

const HEAT: &str = r#"
[experiment]
kind = "cross-validate"
degree = 6

[kernel]
family = "constant"
q0 = 0.25

[coefficients]
family = "brownian"

[driver]
f = "0"
g = "0"

[terminal]
family = "gaussian_bump"
center = [0.0]
width = 1.0
height = 1.0

[grid]
horizon = 0.5
steps = 16
paths = 4000
nodes = 200
spread = [-3.0, 3.0]

[seeds]
master = 3
"#;

#[test]
fn cross_validation_reports_every_level_and_plots_the_profile() {
    let dir = tempfile::tempdir().unwrap();
    let m = run(&parse(HEAT), dir.path()).unwrap();
    assert!(m.pass, "{:?}", m.assertions);
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("report.json")).unwrap()).unwrap();
    let levels = report[0]["cross"]["levels"].as_array().unwrap();
    // One level per step before the terminal time, which both routes share.
    assert_eq!(levels.len(), 16);
    assert_eq!(levels[0]["t"].as_f64(), Some(0.0));
    let plots = emit_plots(&m, dir.path()).unwrap();
    let svg = std::fs::read_to_string(dir.path().join("u_profile.svg")).unwrap();
    assert!(plots.iter().any(|p| p.ends_with("u_profile.svg")));
    assert!(svg.starts_with("<svg") && svg.contains("polyline"));
}

#[test]
fn identical_configs_give_identical_bytes() {
    let cfg = parse(&HEAT.replace("g = \"0\"", "g = \"0.3*sin_y\"").replace("\"constant\"\nq0 = 0.25", "\"exponential\"\nlength = 1.0\namplitude = 0.25"));
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (ma, mb) = (run(&cfg, a.path()).unwrap(), run(&cfg, b.path()).unwrap());
    assert!(ma.output_mismatches(&mb).is_empty());
    assert_eq!(bytes(a.path(), &ma), bytes(b.path(), &mb));
    assert_eq!(ma.config_sha256, mb.config_sha256);
    assert_eq!(ma.seeds, mb.seeds);
}

#[test]
fn deterministic_oracle_matches_the_heat_convolution() {
    let text = HEAT.replace("\"cross-validate\"", "\"oracle\"\noracle = \"deterministic_fk\"").replace("[grid]", "[grid]\nprobes = [0.0, 1.0]");
    let dir = tempfile::tempdir().unwrap();
    run(&parse(&text), dir.path()).unwrap();
    let rows: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("report.json")).unwrap()).unwrap();
    // Bump of width 1 smoothed for time 0.5: width^2 = 1.5.
    for row in rows.as_array().unwrap() {
        let x = row["x"].as_f64().unwrap();
        let exact = (1.0f64 / 1.5).sqrt() * (-x * x / 3.0).exp();
        assert!((row["mean"].as_f64().unwrap() - exact).abs() < 1e-10, "{row}");
    }
}

#[test]
fn solve_spde_writes_one_grid_per_realization() {
    let text = HEAT.replace("cross-validate", "solve-spde").replace("[grid]", "[grid]\nrealizations = 2\nprobes = [0.0]");
    let dir = tempfile::tempdir().unwrap();
    let m = run(&parse(&text), dir.path()).unwrap();
    for r in 0..2 {
        let csv = std::fs::read_to_string(dir.path().join(format!("field_r{r}.csv"))).unwrap();
        assert_eq!(csv.lines().count(), 1 + 17);
    }
    assert!(m.outputs.iter().any(|o| o.path == "report.json"));
}

#[test]
fn moment_refinement_is_reported() {
    let text = HEAT
        .replace("\"cross-validate\"", "\"solve-bdsde\"\nmoment_p = 2.0")
        .replace("g = \"0\"", "g = \"1*y\"")
        .replace("paths = 4000", "paths = 8000");
    let dir = tempfile::tempdir().unwrap();
    let m = run(&parse(&text), dir.path()).unwrap();
    let a = m.assertions.iter().find(|a| a.name == "moment_refinement_change").unwrap();
    assert!(a.pass, "{a:?}");
}

#[test]
fn dump_round_trips_both_containers() {
    let text = r#"
[experiment]
kind = "dump-paths"

[kernel]
family = "exponential"
length = 0.5
amplitude = 1.0

[coefficients]
family = "constant"
drift = 0.5
sigma = 0.3

[grid]
horizon = 1.0
steps = 10
paths = 50

[seeds]
master = 9
"#;
    let dir = tempfile::tempdir().unwrap();
    let m = run(&parse(text), dir.path()).unwrap();
    assert!(m.pass);
    assert_eq!(m.assertions.len(), 2);
    let csv = std::fs::read_to_string(dir.path().join("paths.csv")).unwrap();
    assert!(csv.lines().count() > 10);
}
