use std::fmt::Write;

use bdsde::bdsde_solver::{
    moment_report, picard_monitor, solve, variational_z, ContractionReport, MomentReport, TermKind, TimeShape,
    WeightedNormConfig,
};
use bdsde::kunita_calculus::request_along_paths;
use bdsde::noise_field::{sample_increments, PointRequest};
use bdsde::oracles::{brownian_bundle, deterministic_fk, explicit_linear_fk, FkOptions, OracleEstimate};
use bdsde::spde_fd::{cross_validate as compare, fd_nodes, solve_spde as fd_solve, CrossReport, FdConfig};
use bdsde::stats::{median, Estimate};
use bdsde::{Coefficients, Field, Grid, Kernel, Solution};
use serde::Serialize;

use super::{bundle, field, Run, Start};
use crate::config::{ExperimentConfig, OracleMode};
use crate::error::HarnessError;

fn fd_config(cfg: &ExperimentConfig) -> FdConfig {
    let g = &cfg.grid;
    FdConfig {
        scheme: cfg.experiment.fd_scheme,
        noise: cfg.experiment.noise,
        ..FdConfig::new(g.nodes, (g.probe_interval[0], g.probe_interval[1]))
    }
}

fn is_brownian(c: &Coefficients) -> bool {
    c.is_zero_drift() && c.is_constant_diffusion() && {
        let mut s = [0.0];
        c.diffusion_into(&[0.0], &mut s);
        s[0] == 1.0
    }
}

/// Values of `u(0, .)` on `n` evenly spaced points of the probe interval.
fn profile(cfg: &ExperimentConfig, n: usize) -> Vec<f64> {
    let [lo, hi] = cfg.grid.probe_interval;
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

#[derive(Serialize)]
struct ProbeRow {
    realization: usize,
    x: f64,
    y0: Estimate,
    #[serde(skip_serializing_if = "Option::is_none")]
    oracle: Option<OracleEstimate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pass: Option<bool>,
}

#[derive(Serialize)]
struct Refinement {
    coarse: MomentReport,
    fine: MomentReport,
    relative_change: (f64, f64),
}

#[derive(Serialize)]
struct SolveReport {
    rows: Vec<ProbeRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    realization_pass_fraction: Option<f64>,
    moments: Vec<MomentReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    refinement: Option<Refinement>,
}

/// Moment reports on `N` and `2N` steps driven by one field: the coarse
/// positions are declared on both fine sub-steps and the fine realization
/// is summed pairwise.
fn refinement(run: &mut Run, kernel: &Kernel, coeffs: &Coefficients, p: f64) -> Result<Refinement, HarnessError> {
    let cfg = run.cfg;
    let g = &cfg.grid;
    let fine_grid = Grid::uniform(0.0, g.horizon, 2 * g.steps)?;
    let driver = cfg.driver(kernel)?;
    let start = match g.spread {
        Some([lo, hi]) => Start::Spread(lo, hi),
        None => Start::Point(g.probes[0]),
    };
    let fine = bundle(coeffs, start, &fine_grid, g.paths, run.seed("refinement-paths", 0), false)?;
    let coarse = fine.coarsened(coeffs, 2)?;
    let mut req = PointRequest::new(1, 2 * g.steps);
    request_along_paths(&mut req, &fine, 0);
    for j in 0..g.steps {
        req.declare_flat(2 * j, coarse.states_at(j + 1));
        req.declare_flat(2 * j + 1, coarse.states_at(j + 1));
    }
    let rf = sample_increments(kernel, &fine_grid, &req, run.seed("refinement-field", 0))?;
    let rc = rf.coarsened(2)?;
    let solver = cfg.experiment.solver();
    let lo = moment_report(&solve(&driver, &cfg.terminal, &coarse, &rc, &solver)?, p)?;
    let hi = moment_report(&solve(&driver, &cfg.terminal, &fine, &rf, &solver)?, p)?;
    let relative_change = lo.refinement_ratio(&hi);
    Ok(Refinement { coarse: lo, fine: hi, relative_change })
}

pub fn solve_bdsde(run: &mut Run) -> Result<(), HarnessError> {
    let cfg = run.cfg;
    let g = &cfg.grid;
    let e = &cfg.experiment;
    let kernel = cfg.kernel()?;
    let driver = cfg.driver(&kernel)?;
    let coeffs = cfg.coefficients.build();
    let grid = g.time_grid()?;
    let solver = e.solver();
    if e.compare_oracle {
        let linear = driver.f.is_zero()
            && driver.g.terms.iter().all(|t| matches!(t.kind, TermKind::Y) && t.coeff == 1.0 && t.time == TimeShape::One);
        if !linear || !is_brownian(&coeffs) || g.spread.is_some() {
            return Err(HarnessError::Config(vec![
                "experiment.compare_oracle: needs f = 0, g = 1*y, brownian coefficients and point starts".into(),
            ]));
        }
    }
    let mut rows = Vec::new();
    let mut moments = Vec::new();
    let mut surface = String::from("realization,x,u0\n");
    let mut passes = 0usize;
    for r in 0..g.realizations {
        let field_seed = run.seed("field", r as u64);
        let mut all_pass = true;
        let starts: Vec<Start> = match g.spread {
            Some([lo, hi]) => vec![Start::Spread(lo, hi)],
            None => g.probes.iter().map(|&x| Start::Point(x)).collect(),
        };
        // Probes are solved one at a time to bound memory. The field is
        // resampled from one seed for each; a spatially constant kernel
        // draws the same Brownian path for every point set.
        for (i, start) in starts.into_iter().enumerate() {
            let idx = (r * g.probes.len() + i) as u64;
            let b = bundle(&coeffs, start, &grid, g.paths, run.seed("paths", idx), false)?;
            let w = if e.compare_oracle {
                let Start::Point(x) = start else { unreachable!() };
                Some(brownian_bundle(&[x], &grid, g.paths, run.seed("oracle-paths", idx))?)
            } else {
                None
            };
            let mut bundles = vec![&b];
            bundles.extend(w.as_ref());
            let real = field(&kernel, &grid, &bundles, &[], field_seed)?;
            let sol = solve(&driver, &cfg.terminal, &b, &real, &solver)?;
            if let Some(p) = e.moment_p {
                moments.push(moment_report(&sol, p)?);
            }
            if r == 0 && i == 0 {
                run.write("solution.bin", &sol.to_bytes()?)?;
            }
            match start {
                Start::Point(x) => {
                    let oracle = w.as_ref().map(|w| explicit_linear_fk(&cfg.terminal, &real, w)).transpose()?;
                    let pass = oracle.map(|o| {
                        (sol.y0().mean - o.mean).abs() <= cfg.tolerances.n_se * sol.y0().combined_stderr(&o.estimate())
                    });
                    all_pass &= pass.unwrap_or(true);
                    rows.push(ProbeRow { realization: r, x, y0: sol.y0(), oracle, pass });
                }
                Start::Spread(..) => {
                    for &x in &g.probes {
                        rows.push(ProbeRow {
                            realization: r,
                            x,
                            y0: Estimate { mean: sol.u(0, &[x]), stderr: f64::NAN, n: g.paths },
                            oracle: None,
                            pass: None,
                        });
                    }
                    for x in profile(cfg, 101) {
                        writeln!(surface, "{r},{x:e},{:e}", sol.u(0, &[x])).unwrap();
                    }
                }
            }
        }
        passes += all_pass as usize;
    }
    let mut csv = String::from("realization,x,y0,y0_stderr,oracle,oracle_stderr,pass\n");
    for row in &rows {
        let (om, os) = row.oracle.map(|o| (o.mean, o.stderr)).unwrap_or((f64::NAN, f64::NAN));
        let pass = row.pass.map(|p| p.to_string()).unwrap_or_default();
        writeln!(csv, "{},{:e},{:e},{:e},{om:e},{os:e},{pass}", row.realization, row.x, row.y0.mean, row.y0.stderr).unwrap();
    }
    run.write("probes.csv", csv.as_bytes())?;
    if g.spread.is_some() {
        run.write("surface.csv", surface.as_bytes())?;
    }
    let fraction = e.compare_oracle.then(|| passes as f64 / g.realizations as f64);
    if let Some(f) = fraction {
        run.at_least("realization_pass_fraction", f, cfg.tolerances.pass_fraction);
    }
    let refinement = match e.moment_p {
        Some(p) => {
            let rf = refinement(run, &kernel, &coeffs, p)?;
            let worst = rf.relative_change.0.max(rf.relative_change.1);
            run.at_most("moment_refinement_change", worst, cfg.tolerances.moment_rel);
            Some(rf)
        }
        None => None,
    };
    run.report(&SolveReport { rows, realization_pass_fraction: fraction, moments, refinement })
}

#[derive(Serialize)]
struct SpdeReport {
    manifests: Vec<serde_json::Value>,
    u0_at_probes: Vec<Vec<f64>>,
}

pub fn solve_spde(run: &mut Run) -> Result<(), HarnessError> {
    let cfg = run.cfg;
    let g = &cfg.grid;
    let kernel = cfg.kernel()?;
    let driver = cfg.driver(&kernel)?;
    let coeffs = cfg.coefficients.build();
    let grid = g.time_grid()?;
    let fdc = fd_config(cfg);
    let nodes = fd_nodes(&coeffs, &fdc, g.horizon)?;
    let mut report = SpdeReport { manifests: Vec::new(), u0_at_probes: Vec::new() };
    for r in 0..g.realizations {
        let real = field(&kernel, &grid, &[], &nodes, run.seed("field", r as u64))?;
        let fd = fd_solve(&driver, &cfg.terminal, &coeffs, &real, &grid, &nodes, &fdc)?;
        run.write(&format!("field_r{r}.csv"), fd.to_csv().as_bytes())?;
        report.manifests.push(fd.manifest(&real));
        report.u0_at_probes.push(g.probes.iter().map(|&x| fd.interpolate(0, x)).collect());
    }
    run.report(&report)
}

fn l2_relative(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den.max(1e-300)).sqrt()
}

#[derive(Serialize)]
struct GradientComparison {
    nodes: Vec<f64>,
    regression: Vec<f64>,
    flow: Vec<f64>,
    grid: Vec<f64>,
    /// Relative L2 distances: regression vs flow (relative to flow),
    /// regression vs grid and flow vs grid (relative to grid).
    regression_flow: f64,
    regression_grid: f64,
    flow_grid: f64,
}

#[derive(Serialize)]
struct CrossEntry {
    realization: usize,
    realization_id: u64,
    cross: CrossReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    gradients: Option<GradientComparison>,
}

fn gradients(
    cfg: &ExperimentConfig,
    sol: &Solution,
    fd: &Field,
    b: &bdsde::Paths,
    coeffs: &Coefficients,
    real: &bdsde::Realization,
    driver: &bdsde::bdsde_solver::Driver,
) -> Result<GradientComparison, HarnessError> {
    let e = &cfg.experiment;
    let vz = variational_z(sol, b, coeffs, driver, &cfg.terminal, real, e.basis(), e.noise)?;
    let [lo, hi] = cfg.grid.probe_interval;
    let idx: Vec<usize> = (0..fd.nodes.len()).filter(|&j| (lo..=hi).contains(&fd.nodes[j])).collect();
    let nodes: Vec<f64> = idx.iter().map(|&j| fd.nodes[j]).collect();
    let mut out = [0.0];
    let mut sigma = [0.0];
    let regression = nodes.iter().map(|&x| { sol.z_surface(0, &[x], &mut out); out[0] }).collect::<Vec<_>>();
    let flow = nodes.iter().map(|&x| { vz.flow_z_surface(0, &[x], coeffs, &mut out); out[0] }).collect::<Vec<_>>();
    let grid = idx
        .iter()
        .map(|&j| {
            coeffs.diffusion_into(&[fd.nodes[j]], &mut sigma);
            fd.slope(0, j) * sigma[0]
        })
        .collect::<Vec<_>>();
    Ok(GradientComparison {
        regression_flow: l2_relative(&regression, &flow),
        regression_grid: l2_relative(&regression, &grid),
        flow_grid: l2_relative(&flow, &grid),
        nodes,
        regression,
        flow,
        grid,
    })
}

/// Regression surfaces of the backward solver against the grid solution on
/// shared realizations.
pub fn cross_validate(run: &mut Run) -> Result<(), HarnessError> {
    let cfg = run.cfg;
    let g = &cfg.grid;
    let e = &cfg.experiment;
    let kernel = cfg.kernel()?;
    let driver = cfg.driver(&kernel)?;
    let coeffs = cfg.coefficients.build();
    let grid = g.time_grid()?;
    let fdc = fd_config(cfg);
    let nodes = fd_nodes(&coeffs, &fdc, g.horizon)?;
    let [lo, hi] = g.spread.unwrap_or([g.probe_interval[0] - 1.0, g.probe_interval[1] + 1.0]);
    let mut entries = Vec::new();
    let mut profile_csv = String::from("realization,x,u_backward,u_grid\n");
    let mut grad_csv = String::from("realization,x,regression,flow,grid\n");
    for r in 0..g.realizations {
        let b = bundle(&coeffs, Start::Spread(lo, hi), &grid, g.paths, run.seed("paths", r as u64), e.compare_z)?;
        let real = field(&kernel, &grid, &[&b], &nodes, run.seed("field", r as u64))?;
        let sol = solve(&driver, &cfg.terminal, &b, &real, &e.solver())?;
        let fd = fd_solve(&driver, &cfg.terminal, &coeffs, &real, &grid, &nodes, &fdc)?;
        let cross = compare(&sol, &fd, fdc.probe)?;
        for (j, x) in fd.nodes.iter().enumerate().filter(|(_, x)| (fdc.probe.0..=fdc.probe.1).contains(x)) {
            writeln!(profile_csv, "{r},{x:e},{:e},{:e}", sol.u(0, &[*x]), fd.row(0)[j]).unwrap();
        }
        run.at_most(&format!("l2_relative_t0/r{r}"), cross.levels[0].l2_relative, cfg.tolerances.l2_rel);
        let grads = if e.compare_z { Some(gradients(cfg, &sol, &fd, &b, &coeffs, &real, &driver)?) } else { None };
        if let Some(gr) = &grads {
            for i in 0..gr.nodes.len() {
                writeln!(grad_csv, "{r},{:e},{:e},{:e},{:e}", gr.nodes[i], gr.regression[i], gr.flow[i], gr.grid[i]).unwrap();
            }
            let z = cfg.tolerances.l2_rel;
            run.at_most(&format!("z_regression_flow/r{r}"), gr.regression_flow, z);
            run.at_most(&format!("z_regression_grid/r{r}"), gr.regression_grid, z);
            run.at_most(&format!("z_flow_grid/r{r}"), gr.flow_grid, z);
        }
        entries.push(CrossEntry { realization: r, realization_id: real.id().0, cross, gradients: grads });
    }
    run.write("profile.csv", profile_csv.as_bytes())?;
    if e.compare_z {
        run.write("gradients.csv", grad_csv.as_bytes())?;
    }
    run.report(&entries)
}

#[derive(Serialize)]
struct OracleRow {
    realization: usize,
    x: f64,
    #[serde(flatten)]
    estimate: OracleEstimate,
}

pub fn oracle(run: &mut Run) -> Result<(), HarnessError> {
    let cfg = run.cfg;
    let g = &cfg.grid;
    let kernel = cfg.kernel()?;
    let grid = g.time_grid()?;
    let mut rows = Vec::new();
    match cfg.experiment.oracle.expect("validated") {
        OracleMode::ExplicitLinearFk => {
            for r in 0..g.realizations {
                let fs = run.seed("field", r as u64);
                for (i, &x) in g.probes.iter().enumerate() {
                    let w = brownian_bundle(&[x], &grid, g.paths, run.seed("oracle-paths", (r * g.probes.len() + i) as u64))?;
                    let real = field(&kernel, &grid, &[&w], &[], fs)?;
                    rows.push(OracleRow { realization: r, x, estimate: explicit_linear_fk(&cfg.terminal, &real, &w)? });
                }
            }
        }
        OracleMode::DeterministicFk => {
            let driver = cfg.driver(&kernel)?;
            let linear = driver.g.is_zero()
                && driver.f.terms.iter().all(|t| matches!(t.kind, TermKind::Y) && t.time == TimeShape::One);
            if !linear {
                return Err(HarnessError::Config(vec!["driver: deterministic_fk needs f = lambda*y and g = 0".into()]));
            }
            let lambda: f64 = driver.f.terms.iter().map(|t| t.coeff).sum();
            let coeffs = cfg.coefficients.build();
            let opts = FkOptions { n_paths: g.paths, n_steps: g.steps, seed: run.seed("oracle-paths", 0), quadrature_nodes: 64 };
            for &x in &g.probes {
                let estimate = deterministic_fk(&cfg.terminal, lambda, &coeffs, 0.0, g.horizon, &[x], &opts)?;
                rows.push(OracleRow { realization: 0, x, estimate });
            }
        }
    }
    run.report(&rows)
}

#[derive(Serialize)]
struct PicardReport {
    per_realization: Vec<ContractionReport>,
    /// Distances averaged over realizations: the weighted norm is an
    /// expectation over both noises, and one field sample only conditions it.
    pooled_distances: Vec<f64>,
    pooled_ratios: Vec<f64>,
    /// Ratios of iterations 2 to 5 against their predecessors.
    window: Vec<f64>,
    window_median: f64,
}

/// Successive weighted distances of the outer fixed-point iteration.
pub fn picard(run: &mut Run) -> Result<(), HarnessError> {
    let cfg = run.cfg;
    let g = &cfg.grid;
    let e = &cfg.experiment;
    let kernel = cfg.kernel()?;
    let driver = cfg.driver(&kernel)?;
    let coeffs = cfg.coefficients.build();
    let grid = g.time_grid()?;
    let norm = WeightedNormConfig::from_driver(&driver)?;
    let start = match g.spread {
        Some([lo, hi]) => Start::Spread(lo, hi),
        None => Start::Point(g.probes[0]),
    };
    let mut per_realization = Vec::new();
    let mut csv = String::from("realization,iteration,distance,ratio\n");
    for r in 0..g.realizations {
        let b = bundle(&coeffs, start, &grid, g.paths, run.seed("paths", r as u64), false)?;
        let real = field(&kernel, &grid, &[&b], &[], run.seed("field", r as u64))?;
        let report = picard_monitor(&driver, &cfg.terminal, &b, &real, e.basis(), e.iterations, norm)?;
        for (n, d) in report.distances.iter().enumerate() {
            let ratio = if n == 0 { f64::NAN } else { report.ratios[n - 1] };
            writeln!(csv, "{r},{},{d:e},{ratio:e}", n + 1).unwrap();
        }
        per_realization.push(report);
    }
    let iters = e.iterations;
    let pooled_distances: Vec<f64> = (0..iters)
        .map(|n| per_realization.iter().map(|rep| rep.distances[n]).sum::<f64>() / g.realizations as f64)
        .collect();
    let pooled_ratios: Vec<f64> = pooled_distances.windows(2).map(|w| w[1] / w[0]).collect();
    for (n, d) in pooled_distances.iter().enumerate() {
        let ratio = if n == 0 { f64::NAN } else { pooled_ratios[n - 1] };
        writeln!(csv, "pooled,{},{d:e},{ratio:e}", n + 1).unwrap();
    }
    let window: Vec<f64> = pooled_ratios.iter().take(4).copied().collect();
    let window_median = median(&window);
    let worst = window.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    run.flag("max_ratio_iterations_2_5", worst, cfg.tolerances.ratio_max, worst < cfg.tolerances.ratio_max, "value < threshold");
    run.at_most("median_ratio_iterations_2_5", window_median, cfg.tolerances.median_ratio);
    run.write("picard.csv", csv.as_bytes())?;
    run.report(&PicardReport { per_realization, pooled_distances, pooled_ratios, window, window_median })
}
