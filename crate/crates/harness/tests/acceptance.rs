//! Acceptance suite: one line per criterion, `[PASS]` or `[FAIL]`.
//!
//! Run a subset with `cargo test --test acceptance -- 3 7`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use bdsde::noise_field::FieldRealization;
use bdsde_harness::manifest::Assertion;
use bdsde_harness::{rerun, run, ExperimentConfig, HarnessError, RunManifest};

fn config(name: &str) -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(format!("{name}.toml"));
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    ExperimentConfig::parse(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

struct Outcome {
    pass: bool,
    summary: String,
    details: Vec<String>,
}

impl Outcome {
    fn error(e: HarnessError) -> Self {
        Self { pass: false, summary: format!("error: {e}"), details: Vec::new() }
    }
}

fn describe(a: &Assertion) -> String {
    let op = if a.detail.contains(">=") { ">=" } else if a.detail.contains('<') && !a.detail.contains("<=") { "<" } else { "<=" };
    format!("{} {} {:.4e} {op} {:.4e}", if a.pass { "ok " } else { "BAD" }, a.name, a.value, a.threshold)
}

/// Runs configs and passes when every declared assertion passes. The
/// summary shows the assertion closest to (or furthest past) its threshold.
fn assertions(names: &[&str], root: &Path) -> Outcome {
    let mut all = Vec::new();
    for name in names {
        match run(&config(name), &root.join(name)) {
            Ok(m) => all.extend(m.assertions),
            Err(e) => return Outcome::error(e),
        }
    }
    let margin = |a: &Assertion| {
        let r = a.value.abs() / a.threshold.abs().max(1e-300);
        if a.detail.contains(">=") { 1.0 / r.max(1e-300) } else { r }
    };
    let pass = !all.is_empty() && all.iter().all(|a| a.pass);
    let worst = all
        .iter()
        .filter(|a| a.threshold != 0.0 && a.threshold.is_finite())
        .max_by(|x, y| (!x.pass, margin(x)).partial_cmp(&(!y.pass, margin(y))).unwrap())
        .or_else(|| all.iter().find(|a| !a.pass))
        .or(all.first());
    let summary = match worst {
        Some(a) => format!("{} assertions, tightest: {}", all.len(), describe(a)),
        None => "no assertions".into(),
    };
    Outcome { pass, summary, details: all.iter().map(describe).collect() }
}

fn read_all(dir: &Path, m: &RunManifest) -> Vec<(String, Vec<u8>)> {
    m.outputs.iter().map(|o| (o.path.clone(), std::fs::read(dir.join(&o.path)).unwrap_or_default())).collect()
}

/// Two runs of one config and a re-run of its manifest produce identical
/// output bytes; paths and field realizations survive the binary container.
fn determinism(root: &Path) -> Outcome {
    let go = || -> Result<Outcome, HarnessError> {
        let cfg = config("c10_determinism");
        let (a, b, c) = (root.join("first"), root.join("second"), root.join("rerun"));
        let ma = run(&cfg, &a)?;
        let mb = run(&cfg, &b)?;
        let twice = ma.output_mismatches(&mb);
        let bytes_equal = read_all(&a, &ma) == read_all(&b, &mb);
        let stored = RunManifest::read(&a)?;
        let (mc, rerun_diff) = rerun(&stored, &c)?;
        let rerun_equal = read_all(&a, &ma) == read_all(&c, &mc);
        let dump = run(&config("c10_dump"), &root.join("dump"))?;
        let bytes = std::fs::read(root.join("dump").join("field.bin"))?;
        let back = FieldRealization::<f64>::from_bytes(&bytes)?;
        let second = back.to_bytes()?;
        let containers = dump.pass && second == bytes;
        let details = vec![
            format!("digest mismatches between two runs: {twice:?}"),
            format!("byte-identical outputs between two runs: {bytes_equal}"),
            format!("digest mismatches after re-running the manifest: {rerun_diff:?}"),
            format!("byte-identical outputs after re-run: {rerun_equal}"),
            format!("container round trips: {:?}", dump.assertions.iter().map(describe).collect::<Vec<_>>()),
            format!("re-encoded field container identical: {}", second == bytes),
        ];
        let pass = twice.is_empty() && bytes_equal && rerun_diff.is_empty() && rerun_equal && containers;
        let n = ma.outputs.len();
        let summary = format!(
            "{n} outputs identical across two runs and a re-run: {}, containers lossless: {containers}",
            twice.is_empty() && rerun_diff.is_empty() && bytes_equal && rerun_equal
        );
        Ok(Outcome { pass, summary, details })
    };
    go().unwrap_or_else(Outcome::error)
}

struct Criterion {
    id: u32,
    name: &'static str,
    budget_seconds: f64,
    check: fn(&Path) -> Outcome,
}

fn criteria() -> Vec<Criterion> {
    vec![
        Criterion { id: 1, name: "quadratic variation of the backward integral", budget_seconds: 60.0, check: |r| assertions(&["c01_qv"], r) },
        Criterion { id: 2, name: "Ito correction sign", budget_seconds: 60.0, check: |r| assertions(&["c02_ito"], r) },
        Criterion { id: 3, name: "linear Feynman-Kac agreement", budget_seconds: 600.0, check: |r| assertions(&["c03_linear_fk"], r) },
        Criterion {
            id: 4,
            name: "backward solver vs finite differences",
            budget_seconds: 900.0,
            check: |r| assertions(&["c04a_dual_linear", "c04b_dual_nonlinear"], r),
        },
        Criterion { id: 5, name: "contraction of the fixed-point map", budget_seconds: 300.0, check: |r| assertions(&["c05_picard"], r) },
        Criterion { id: 6, name: "variational Z", budget_seconds: 300.0, check: |r| assertions(&["c06_variational_z"], r) },
        Criterion { id: 7, name: "horizon Cauchy decay", budget_seconds: 300.0, check: |r| assertions(&["c07_horizon_cauchy"], r) },
        Criterion {
            id: 8,
            name: "random periodicity",
            budget_seconds: 600.0,
            check: |r| assertions(&["c08a_periodic", "c08b_periodic_noisy"], r),
        },
        Criterion { id: 9, name: "stationarity", budget_seconds: 600.0, check: |r| assertions(&["c09_stationary"], r) },
        Criterion { id: 10, name: "determinism and serialization", budget_seconds: 60.0, check: determinism },
    ]
}

fn main() -> ExitCode {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let verbose = std::env::var_os("ACCEPTANCE_VERBOSE").is_some();
    let root: PathBuf = tempfile::tempdir().expect("temporary directory").keep();
    let mut failed = 0;
    let mut ran = 0;
    for c in criteria().into_iter().filter(|c| wanted.is_empty() || wanted.contains(&c.id)) {
        let dir = root.join(format!("criterion{:02}", c.id));
        let start = Instant::now();
        let out = (c.check)(&dir);
        let secs = start.elapsed().as_secs_f64();
        ran += 1;
        failed += usize::from(!out.pass);
        let over = if secs > c.budget_seconds { " OVER BUDGET" } else { "" };
        println!(
            "[{}] {:>2} {}: {} ({secs:.1}s of {:.0}s{over})",
            if out.pass { "PASS" } else { "FAIL" },
            c.id,
            c.name,
            out.summary,
            c.budget_seconds
        );
        if verbose || !out.pass {
            for d in &out.details {
                println!("         {d}");
            }
        }
    }
    println!("acceptance: {} of {ran} criteria passed; run directories under {}", ran - failed, root.display());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
