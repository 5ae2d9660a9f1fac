//! Experiment configuration: a TOML file with one section per concern.
//! Every function is chosen by registry name plus parameters.

use bdsde::bdsde_solver::{
    parse_terms, BasisKind, Driver, DriverFn, DriverTerm, Scheme, SolverConfig, TermKind, TerminalCondition, TimeShape,
};
use bdsde::kunita_calculus::{NoiseIntegrator, TestFunction};
use bdsde::noise_field::{CovarianceKernel, KernelFamily};
use bdsde::spde_fd::FdScheme;
use bdsde::{Coefficients, Grid, Kernel};
use serde::{Deserialize, Serialize};

use crate::error::HarnessError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    QvCheck,
    ItoResidual,
    SolveBdsde,
    SolveSpde,
    CrossValidate,
    Oracle,
    Picard,
    HorizonCauchy,
    Periodic,
    Stationary,
    DumpPaths,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::QvCheck => "qv-check",
            Self::ItoResidual => "ito-residual",
            Self::SolveBdsde => "solve-bdsde",
            Self::SolveSpde => "solve-spde",
            Self::CrossValidate => "cross-validate",
            Self::Oracle => "oracle",
            Self::Picard => "picard",
            Self::HorizonCauchy => "horizon-cauchy",
            Self::Periodic => "periodic",
            Self::Stationary => "stationary",
            Self::DumpPaths => "dump-paths",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum CoefficientSpec {
    Brownian,
    OrnsteinUhlenbeck { theta: f64, sigma: f64 },
    Constant { drift: f64, sigma: f64 },
}

impl CoefficientSpec {
    pub fn build(&self) -> Coefficients {
        match *self {
            Self::Brownian => Coefficients::brownian(1),
            Self::OrnsteinUhlenbeck { theta, sigma } => Coefficients::ornstein_uhlenbeck(1, theta, sigma),
            Self::Constant { drift, sigma } => Coefficients::constant(1, drift, sigma),
        }
    }
}

/// Additive forcing `amplitude * sin(2 pi t / period + phase)` in `f`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Forcing {
    pub amplitude: f64,
    pub period: f64,
    #[serde(default)]
    pub phase: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriverSpec {
    /// Term list such as `"-1*y + 1*cos_y"`.
    #[serde(default = "zero_terms")]
    pub f: String,
    #[serde(default = "zero_terms")]
    pub g: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forcing: Option<Forcing>,
}

fn zero_terms() -> String {
    "0".into()
}

impl DriverSpec {
    pub fn build(&self, kernel: &Kernel) -> bdsde::Result<Driver> {
        let mut f = parse_terms(&self.f)?;
        if let Some(fc) = self.forcing {
            f.terms.push(DriverTerm::timed(
                fc.amplitude,
                TimeShape::Sin { period: fc.period, phase: fc.phase },
                TermKind::Const,
            ));
        }
        let f = DriverFn::new(f.terms);
        Driver::for_kernel(f, parse_terms(&self.g)?, kernel)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Terminal time `T`.
    pub horizon: f64,
    /// Time steps `N`.
    pub steps: usize,
    /// Forward paths `M` per realization and probe.
    pub paths: usize,
    /// Field realizations `R`.
    #[serde(default = "one")]
    pub realizations: usize,
    /// Spatial nodes `G` of the finite-difference grid.
    #[serde(default = "default_nodes")]
    pub nodes: usize,
    /// Probe points `x`.
    #[serde(default = "origin")]
    pub probes: Vec<f64>,
    /// Interval on which surfaces are compared.
    #[serde(default = "unit_interval")]
    pub probe_interval: [f64; 2],
    /// Starting points spread evenly over this interval instead of a point start.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spread: Option<[f64; 2]>,
}

fn one() -> usize {
    1
}
fn default_nodes() -> usize {
    400
}
fn origin() -> Vec<f64> {
    vec![0.0]
}
fn unit_interval() -> [f64; 2] {
    [-1.0, 1.0]
}

impl GridSpec {
    pub fn time_grid(&self) -> bdsde::Result<Grid> {
        Grid::uniform(0.0, self.horizon, self.steps)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub master: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleMode {
    ExplicitLinearFk,
    DeterministicFk,
}

/// Experiment kind plus the parameters only some kinds read.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    #[serde(default = "default_degree")]
    pub degree: u32,
    /// Piecewise-linear basis with this many bins instead of polynomials.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bins: Option<usize>,
    /// Fixed-point refinements per step; zero selects the explicit step.
    #[serde(default)]
    pub n_inner: usize,
    #[serde(default)]
    pub noise: NoiseIntegrator,
    #[serde(default)]
    pub fd_scheme: FdScheme,
    /// Compare with the explicit linear estimator (solve-bdsde).
    #[serde(default)]
    pub compare_oracle: bool,
    /// Compare regression, flow and grid gradients (cross-validate).
    #[serde(default)]
    pub compare_z: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleMode>,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub moment_p: Option<f64>,
    /// Ito residual test function.
    #[serde(default = "default_test_function")]
    pub test_function: String,
    /// Constant coefficients of the Ito test process.
    #[serde(default)]
    pub process: [f64; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discount: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period: Option<f64>,
    #[serde(default)]
    pub ladder: Vec<f64>,
    #[serde(default = "default_spu")]
    pub steps_per_unit: usize,
    #[serde(default)]
    pub shifts: Vec<f64>,
    #[serde(default = "default_check_times")]
    pub check_times: Vec<f64>,
    /// Value the horizon ladder should converge to, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected: Option<f64>,
}

fn default_degree() -> u32 {
    4
}
fn default_iterations() -> usize {
    6
}
fn default_test_function() -> String {
    "square".into()
}
fn default_spu() -> usize {
    16
}
fn default_check_times() -> Vec<f64> {
    vec![0.0]
}

impl ExperimentSpec {
    pub fn basis(&self) -> BasisKind {
        match self.bins {
            Some(bins) => BasisKind::PiecewiseLinear { bins },
            None => BasisKind::Polynomial { degree: self.degree },
        }
    }

    pub fn solver(&self) -> SolverConfig {
        let scheme = if self.n_inner == 0 { Scheme::Explicit } else { Scheme::Implicit { n_inner: self.n_inner } };
        SolverConfig { basis: self.basis(), scheme, noise: self.noise }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Number of combined standard errors for statistical agreement.
    #[serde(default = "n_se")]
    pub n_se: f64,
    #[serde(default = "qv_rel")]
    pub qv_rel: f64,
    /// Relative L2 distance between solver routes.
    #[serde(default = "l2_rel")]
    pub l2_rel: f64,
    /// Fraction of realizations that must pass.
    #[serde(default = "pass_fraction")]
    pub pass_fraction: f64,
    #[serde(default = "ratio_max")]
    pub ratio_max: f64,
    #[serde(default = "median_ratio")]
    pub median_ratio: f64,
    /// Absolute tolerance on deterministic targets.
    #[serde(default = "abs")]
    pub abs: f64,
    #[serde(default = "moment_rel")]
    pub moment_rel: f64,
}

fn n_se() -> f64 {
    3.0
}
fn qv_rel() -> f64 {
    0.05
}
fn l2_rel() -> f64 {
    0.05
}
fn pass_fraction() -> f64 {
    0.875
}
fn ratio_max() -> f64 {
    1.0
}
fn median_ratio() -> f64 {
    0.8
}
fn abs() -> f64 {
    1e-3
}
fn moment_rel() -> f64 {
    0.2
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            n_se: n_se(),
            qv_rel: qv_rel(),
            l2_rel: l2_rel(),
            pass_fraction: pass_fraction(),
            ratio_max: ratio_max(),
            median_ratio: median_ratio(),
            abs: abs(),
            moment_rel: moment_rel(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSpec,
    pub kernel: KernelFamily<f64>,
    pub coefficients: CoefficientSpec,
    #[serde(default = "quiet_driver")]
    pub driver: DriverSpec,
    #[serde(default = "zero_terminal")]
    pub terminal: TerminalCondition,
    pub grid: GridSpec,
    pub seeds: Seeds,
    #[serde(default)]
    pub tolerances: Tolerances,
}

fn quiet_driver() -> DriverSpec {
    DriverSpec { f: zero_terms(), g: zero_terms(), forcing: None }
}
fn zero_terminal() -> TerminalCondition {
    TerminalCondition::Zero
}

/// Dotted paths of every key in `input` that does not survive a
/// deserialize/serialize cycle, i.e. keys the schema does not know.
fn unknown_keys(input: &toml::Table, parsed: &toml::Table, prefix: &str, out: &mut Vec<String>) {
    for (k, v) in input {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match (v, parsed.get(k)) {
            (_, None) => out.push(path),
            (toml::Value::Table(a), Some(toml::Value::Table(b))) => unknown_keys(a, b, &path, out),
            _ => {}
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| HarnessError::Config(vec![e.to_string()]))?;
        let cfg: Self =
            Self::deserialize(table.clone()).map_err(|e| HarnessError::Config(vec![e.to_string()]))?;
        let back = toml::Table::try_from(&cfg).map_err(|e| HarnessError::Config(vec![e.to_string()]))?;
        let mut bad = Vec::new();
        unknown_keys(&table, &back, "", &mut bad);
        let mut problems: Vec<String> = bad.into_iter().map(|k| format!("{k}: unknown key")).collect();
        problems.extend(cfg.problems());
        if problems.is_empty() {
            Ok(cfg)
        } else {
            Err(HarnessError::Config(problems))
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Offending keys with a reason; empty when the config is usable.
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        fn need(p: &mut Vec<String>, ok: bool, key: &str, why: &str) {
            if !ok {
                p.push(format!("{key}: {why}"));
            }
        }
        let g = &self.grid;
        need(&mut p, g.horizon > 0.0 && g.horizon.is_finite(), "grid.horizon", "must be positive");
        need(&mut p, g.steps > 0, "grid.steps", "must be positive");
        need(&mut p, g.paths > 1, "grid.paths", "needs at least two paths");
        need(&mut p, g.realizations > 0, "grid.realizations", "must be positive");
        need(&mut p, g.nodes >= 3, "grid.nodes", "needs at least three nodes");
        need(&mut p, !g.probes.is_empty(), "grid.probes", "must not be empty");
        need(&mut p, g.probe_interval[1] > g.probe_interval[0], "grid.probe_interval", "must be increasing");
        if let Some(s) = g.spread {
            need(&mut p, s[1] > s[0], "grid.spread", "must be increasing");
        }
        need(&mut p, i64::try_from(self.seeds.master).is_ok(), "seeds.master", "must be below 2^63 to fit a TOML integer");
        let e = &self.experiment;
        need(&mut p, e.degree <= 16, "experiment.degree", "at most 16");
        need(&mut p, e.bins.is_none_or(|b| b >= 2), "experiment.bins", "needs at least two bins");
        need(&mut p, e.iterations >= 2, "experiment.iterations", "needs at least two iterations");
        need(&mut p, e.moment_p.is_none_or(|p| p > 1.0), "experiment.moment_p", "must exceed one");
        need(&mut p, TestFunction::parse(&e.test_function).is_ok(), "experiment.test_function", "unknown test function");
        need(&mut p, e.steps_per_unit > 0, "experiment.steps_per_unit", "must be positive");
        need(&mut p, e.ladder.windows(2).all(|w| w[1] > w[0]), "experiment.ladder", "must be increasing");
        need(&mut p, e.shifts.iter().all(|r| *r >= 0.0), "experiment.shifts", "must be non-negative");
        if matches!(e.kind, ExperimentKind::HorizonCauchy | ExperimentKind::Periodic | ExperimentKind::Stationary) {
            need(&mut p, !e.ladder.is_empty(), "experiment.ladder", "horizon experiments need a ladder");
        }
        if e.kind == ExperimentKind::Picard {
            need(&mut p, e.iterations >= 5, "experiment.iterations", "picard runs report iterations 2 to 5");
        }
        if e.kind == ExperimentKind::Oracle {
            need(&mut p, e.oracle.is_some(), "experiment.oracle", "oracle experiments name a mode");
        }
        if e.kind == ExperimentKind::Stationary {
            need(&mut p, !e.shifts.is_empty(), "experiment.shifts", "stationary experiments need shifts");
        }
        if let Some(fc) = self.driver.forcing {
            need(&mut p, fc.period > 0.0, "driver.forcing.period", "must be positive");
        }
        let k = CovarianceKernel::new(self.kernel.clone());
        if let Err(err) = &k {
            p.push(format!("kernel: {err}"));
        }
        if let Ok(k) = &k {
            if let Err(err) = self.driver.build(k) {
                p.push(format!("driver: {err}"));
            }
        }
        let t = &self.tolerances;
        for (key, v) in [
            ("tolerances.n_se", t.n_se),
            ("tolerances.qv_rel", t.qv_rel),
            ("tolerances.l2_rel", t.l2_rel),
            ("tolerances.ratio_max", t.ratio_max),
            ("tolerances.median_ratio", t.median_ratio),
            ("tolerances.abs", t.abs),
            ("tolerances.moment_rel", t.moment_rel),
        ] {
            need(&mut p, v > 0.0 && v.is_finite(), key, "must be positive");
        }
        need(&mut p, (0.0..=1.0).contains(&t.pass_fraction), "tolerances.pass_fraction", "must lie in [0, 1]");
        p
    }

    pub fn kernel(&self) -> Result<Kernel, HarnessError> {
        Ok(CovarianceKernel::new(self.kernel.clone())?)
    }

    pub fn driver(&self, kernel: &Kernel) -> Result<Driver, HarnessError> {
        Ok(self.driver.build(kernel)?)
    }

}
