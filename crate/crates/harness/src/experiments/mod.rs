//! Experiment runners. Each writes its data files through [`Run`], which
//! records digests, derived seeds and tolerance checks for the manifest.

mod calculus;
mod dump;
mod infinite;
mod solve;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use bdsde::forward_sde::{simulate, InitialState};
use bdsde::kunita_calculus::request_along_paths;
use bdsde::noise_field::{sample_increments, PointRequest};
use bdsde::rng::derive_seed;
use bdsde::{Coefficients, Grid, Kernel, Paths, Realization};
use serde::Serialize;

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::error::HarnessError;
use crate::manifest::{sha256_hex, Assertion, OutputFile, RunManifest, SeedRecord};

pub const REPORT_FILE: &str = "report.json";

pub struct Run<'a> {
    pub cfg: &'a ExperimentConfig,
    dir: PathBuf,
    outputs: Vec<OutputFile>,
    assertions: Vec<Assertion>,
    derived: BTreeMap<String, u64>,
}

impl<'a> Run<'a> {
    fn new(cfg: &'a ExperimentConfig, dir: &Path) -> Result<Self, HarnessError> {
        std::fs::create_dir_all(dir)?;
        Ok(Self { cfg, dir: dir.to_path_buf(), outputs: Vec::new(), assertions: Vec::new(), derived: BTreeMap::new() })
    }

    pub fn seed(&mut self, component: &str, index: u64) -> u64 {
        let s = derive_seed(self.cfg.seeds.master, component, index);
        self.derived.insert(format!("{component}/{index}"), s);
        s
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), HarnessError> {
        std::fs::write(self.dir.join(name), bytes)?;
        self.outputs.retain(|o| o.path != name);
        self.outputs.push(OutputFile { path: name.into(), sha256: sha256_hex(bytes), bytes: bytes.len() as u64 });
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), HarnessError> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn report<T: Serialize>(&mut self, value: &T) -> Result<(), HarnessError> {
        self.json(REPORT_FILE, value)
    }

    /// Records `value <= threshold`.
    pub fn at_most(&mut self, name: &str, value: f64, threshold: f64) {
        let pass = value <= threshold;
        self.flag(name, value, threshold, pass, "");
    }

    /// Records `value >= threshold`.
    pub fn at_least(&mut self, name: &str, value: f64, threshold: f64) {
        let pass = value >= threshold;
        self.flag(name, value, threshold, pass, "value >= threshold");
    }

    pub fn flag(&mut self, name: &str, value: f64, threshold: f64, pass: bool, detail: &str) {
        self.assertions.push(Assertion { name: name.into(), value, threshold, pass, detail: detail.into() });
    }

    fn finish(self, started: Instant, unix: u64) -> RunManifest {
        let config = self.cfg.to_toml();
        RunManifest {
            experiment: self.cfg.experiment.kind.name().into(),
            config_sha256: sha256_hex(config.as_bytes()),
            config,
            seeds: SeedRecord { master: self.cfg.seeds.master, derived: self.derived },
            versions: versions(),
            started_unix: unix,
            wall_clock_seconds: started.elapsed().as_secs_f64(),
            pass: self.assertions.iter().all(|a| a.pass),
            outputs: self.outputs,
            assertions: self.assertions,
        }
    }
}

fn versions() -> BTreeMap<String, String> {
    [
        ("bdsde".to_string(), bdsde::VERSION.to_string()),
        ("bdsde-harness".to_string(), env!("CARGO_PKG_VERSION").to_string()),
    ]
    .into()
}

/// How forward paths start.
#[derive(Clone, Copy, Debug)]
pub enum Start {
    Point(f64),
    Spread(f64, f64),
}

pub fn bundle(coeffs: &Coefficients, start: Start, grid: &Grid, m: usize, seed: u64, flow: bool) -> bdsde::Result<Paths> {
    let init = match start {
        Start::Point(x) => InitialState::point(vec![x]),
        Start::Spread(lo, hi) => {
            InitialState::PerPath { xs: (0..m).map(|i| lo + (hi - lo) * (i as f64 + 0.5) / m as f64).collect() }
        }
    };
    simulate(coeffs, init, grid, m, seed, flow)
}

/// One realization declared along every bundle and at every node.
pub fn field(kernel: &Kernel, grid: &Grid, bundles: &[&Paths], nodes: &[f64], seed: u64) -> bdsde::Result<Realization> {
    let mut req = PointRequest::new(1, grid.steps());
    if !nodes.is_empty() {
        req.declare_everywhere(nodes);
    }
    for b in bundles {
        request_along_paths(&mut req, b, 0);
    }
    sample_increments(kernel, grid, &req, seed)
}

/// Executes the configured experiment into `dir` and writes its manifest.
pub fn run(cfg: &ExperimentConfig, dir: &Path) -> Result<RunManifest, HarnessError> {
    let problems = cfg.problems();
    if !problems.is_empty() {
        return Err(HarnessError::Config(problems));
    }
    let started = Instant::now();
    let unix = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let mut run = Run::new(cfg, dir)?;
    match cfg.experiment.kind {
        ExperimentKind::QvCheck => calculus::qv_check(&mut run)?,
        ExperimentKind::ItoResidual => calculus::ito_residual(&mut run)?,
        ExperimentKind::SolveBdsde => solve::solve_bdsde(&mut run)?,
        ExperimentKind::SolveSpde => solve::solve_spde(&mut run)?,
        ExperimentKind::CrossValidate => solve::cross_validate(&mut run)?,
        ExperimentKind::Oracle => solve::oracle(&mut run)?,
        ExperimentKind::Picard => solve::picard(&mut run)?,
        ExperimentKind::HorizonCauchy => infinite::cauchy(&mut run)?,
        ExperimentKind::Periodic => infinite::periodic(&mut run)?,
        ExperimentKind::Stationary => infinite::stationary(&mut run)?,
        ExperimentKind::DumpPaths => dump::dump_paths(&mut run)?,
    }
    let manifest = run.finish(started, unix);
    manifest.write(dir)?;
    Ok(manifest)
}

/// Re-executes the configuration stored in `manifest` into `dir` and lists
/// outputs whose digests differ.
pub fn rerun(manifest: &RunManifest, dir: &Path) -> Result<(RunManifest, Vec<String>), HarnessError> {
    let cfg = ExperimentConfig::parse(&manifest.config)?;
    let again = run(&cfg, dir)?;
    let diff = manifest.output_mismatches(&again);
    Ok((again, diff))
}
