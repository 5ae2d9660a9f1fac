//! Finite-difference solver for the backward semilinear stochastic PDE in
//! one space dimension, driven by the same field realization as the
//! backward equation, and the pathwise cross-check between the two.

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::bdsde_solver::{BackwardSolution, Driver, TerminalCondition};
use crate::error::{invalid, Error, Result};
use crate::forward_sde::SdeCoefficients;
use crate::grid::TimeGrid;
use crate::kunita_calculus::NoiseIntegrator;
use crate::linalg::solve_tridiagonal;
use crate::noise_field::{FieldRealization, RealizationId};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FdScheme {
    /// Diffusion implicit, driver and noise explicit.
    #[default]
    Imex,
    /// Everything explicit; subject to the parabolic step restriction.
    Explicit,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    /// Zero slope at both ends.
    #[default]
    Neumann,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FdConfig {
    pub nodes: usize,
    /// Region where the solution is reported.
    pub probe: (f64, f64),
    /// Margin added on each side, in standard deviations `sigma sqrt(T)`.
    pub margin_sd: f64,
    #[serde(default)]
    pub scheme: FdScheme,
    #[serde(default)]
    pub noise: NoiseIntegrator,
}

impl FdConfig {
    pub fn new(nodes: usize, probe: (f64, f64)) -> Self {
        Self { nodes, probe, margin_sd: 6.0, scheme: FdScheme::Imex, noise: NoiseIntegrator::Exponential }
    }
}

/// Uniform nodes covering the probe region plus the configured margin.
pub fn fd_nodes<T: Real>(coeffs: &SdeCoefficients<T>, cfg: &FdConfig, horizon: f64) -> Result<Vec<T>> {
    if coeffs.dim != 1 {
        return Err(invalid("the finite-difference solver is one-dimensional"));
    }
    if cfg.nodes < 3 || !(cfg.probe.1 > cfg.probe.0) {
        return Err(invalid("need at least three nodes and a non-empty probe region"));
    }
    let radius = cfg.probe.0.abs().max(cfg.probe.1.abs());
    let sigma = coeffs.diffusion_scale_bound(T::lit(radius)).as_f64();
    let margin = cfg.margin_sd * sigma * horizon.max(0.0).sqrt();
    let (lo, hi) = (cfg.probe.0 - margin, cfg.probe.1 + margin);
    let g = cfg.nodes;
    Ok((0..g).map(|j| T::lit(lo + (hi - lo) * j as f64 / (g - 1) as f64)).collect())
}

/// Discrete field `u_k(x_j)`; rows are time levels.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldSolution<T> {
    pub grid: TimeGrid<T>,
    pub nodes: Vec<T>,
    /// `(N+1) * G`, row `k` is time `t_k`.
    pub values: Vec<T>,
    pub boundary: Boundary,
    pub realization_id: RealizationId,
    pub warnings: Vec<String>,
}

impl<T: Real> FieldSolution<T> {
    pub fn row(&self, k: usize) -> &[T] {
        let g = self.nodes.len();
        &self.values[k * g..(k + 1) * g]
    }

    pub fn dx(&self) -> T {
        self.nodes[1] - self.nodes[0]
    }

    /// Linear interpolation of row `k` at `x`.
    pub fn interpolate(&self, k: usize, x: T) -> T {
        let row = self.row(k);
        let g = self.nodes.len();
        let h = self.dx();
        let s = ((x - self.nodes[0]) / h).max(T::zero());
        let j = s.floor().to_usize().unwrap_or(0).min(g - 2);
        let w = (s - T::from_usize_lossy(j)).min(T::one());
        row[j] * (T::one() - w) + row[j + 1] * w
    }

    /// Centered first difference of row `k` at node `j`.
    pub fn slope(&self, k: usize, j: usize) -> T {
        slope(self.row(k), j, self.dx())
    }

    /// Rows are time levels, columns nodes; first column holds the time.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t");
        for x in &self.nodes {
            out.push_str(&format!(",{x}"));
        }
        out.push('\n');
        for k in 0..=self.grid.steps() {
            out.push_str(&format!("{}", self.grid.time(k)));
            for v in self.row(k) {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn manifest(&self, real: &FieldRealization<T>) -> serde_json::Value {
        json!({
            "grid": self.grid.times().iter().map(|t| t.as_f64()).collect::<Vec<_>>(),
            "nodes": self.nodes.iter().map(|x| x.as_f64()).collect::<Vec<_>>(),
            "boundary": self.boundary,
            "kernel": real.kernel(),
            "seed": real.seed(),
            "realization_id": self.realization_id.0,
            "warnings": self.warnings,
        })
    }
}

fn slope<T: Real>(row: &[T], j: usize, h: T) -> T {
    let g = row.len();
    if j == 0 {
        (row[1] - row[0]) / h
    } else if j == g - 1 {
        (row[g - 1] - row[g - 2]) / h
    } else {
        (row[j + 1] - row[j - 1]) / (T::lit(2.0) * h)
    }
}

/// Backward stepping from `u_N = phi` on the nodes declared in `real`.
pub fn solve_spde<T: Real>(
    driver: &Driver,
    terminal: &TerminalCondition,
    coeffs: &SdeCoefficients<T>,
    real: &FieldRealization<T>,
    grid: &TimeGrid<T>,
    nodes: &[T],
    cfg: &FdConfig,
) -> Result<FieldSolution<T>> {
    if coeffs.dim != 1 || real.dim() != 1 {
        return Err(invalid("the finite-difference solver is one-dimensional"));
    }
    let g = nodes.len();
    if g < 3 {
        return Err(invalid("need at least three nodes"));
    }
    let o = real
        .grid()
        .alignment_of(grid)
        .ok_or_else(|| invalid("solver grid is not a sub-grid of the realization grid"))?;
    let h = nodes[1] - nodes[0];
    let n = grid.steps();
    let (mut drift, mut sig) = (vec![T::zero(); g], vec![T::zero(); g]);
    let (mut bb, mut ss) = ([T::zero()], [T::zero()]);
    for j in 0..g {
        coeffs.drift_into(&nodes[j..j + 1], &mut bb);
        coeffs.diffusion_into(&nodes[j..j + 1], &mut ss);
        drift[j] = bb[0];
        sig[j] = ss[0];
    }
    let half = T::lit(0.5);
    let h2 = h * h;
    let mut warnings = Vec::new();
    if cfg.scheme == FdScheme::Explicit {
        let smax = sig.iter().fold(T::zero(), |m, s| m.max(s.abs()));
        let worst = (0..n).map(|k| grid.dt(k)).fold(T::zero(), |m, d| m.max(d));
        let ratio = (smax * smax * worst / h2).as_f64();
        if ratio > 0.5 {
            warnings.push(format!("explicit step exceeds the stability bound: sigma^2 dt / dx^2 = {ratio:.3}"));
        }
    }
    // L_h u_j = a_j u_{j-1} + c_j u_j + e_j u_{j+1}
    let mut a = vec![T::zero(); g];
    let mut c = vec![T::zero(); g];
    let mut e = vec![T::zero(); g];
    for j in 0..g {
        let diff = half * sig[j] * sig[j] / h2;
        if j == 0 {
            c[j] = -T::lit(2.0) * diff;
            e[j] = T::lit(2.0) * diff;
        } else if j == g - 1 {
            a[j] = T::lit(2.0) * diff;
            c[j] = -T::lit(2.0) * diff;
        } else {
            let adv = drift[j] / (T::lit(2.0) * h);
            a[j] = diff - adv;
            c[j] = -T::lit(2.0) * diff;
            e[j] = diff + adv;
        }
    }
    let apply = |u: &[T], j: usize| {
        let mut v = c[j] * u[j];
        if j > 0 {
            v += a[j] * u[j - 1];
        }
        if j + 1 < g {
            v += e[j] * u[j + 1];
        }
        v
    };

    // Field increments at the nodes, located once per step.
    let mut rows = vec![T::zero(); (n + 1) * g];
    for j in 0..g {
        rows[n * g + j] = terminal.eval(&nodes[j..j + 1]);
    }
    let kernel = real.kernel();
    for k in (0..n).rev() {
        let (t1, dt) = (grid.time(k + 1), grid.dt(k));
        let next = rows[(k + 1) * g..(k + 2) * g].to_vec();
        let mut rhs = vec![T::zero(); g];
        for j in 0..g {
            let x = &nodes[j..j + 1];
            let z = [sig[j] * slope(&next, j, h)];
            let db = real.evaluate_increment(o + k, x)?;
            let dq = kernel.eval_unchecked(real.grid().time(o + k), x, x) * dt;
            let gv = driver.g.eval(t1, x, next[j], &z);
            let noise = cfg.noise.step(gv, driver.g.dy(t1, next[j]), db, dq);
            rhs[j] = next[j] + driver.f.eval(t1, x, next[j], &z) * dt + noise;
            if cfg.scheme == FdScheme::Explicit {
                rhs[j] += dt * apply(&next, j);
            }
        }
        let cur = match cfg.scheme {
            FdScheme::Explicit => rhs,
            FdScheme::Imex => {
                let lower: Vec<T> = a.iter().map(|v| -dt * *v).collect();
                let diag: Vec<T> = c.iter().map(|v| T::one() - dt * *v).collect();
                let upper: Vec<T> = e.iter().map(|v| -dt * *v).collect();
                solve_tridiagonal(&lower, &diag, &upper, &rhs)?
            }
        };
        if let Some(j) = cur.iter().position(|v| !v.is_finite()) {
            return Err(Error::Divergence { step: k, path: j });
        }
        rows[k * g..(k + 1) * g].copy_from_slice(&cur);
    }
    Ok(FieldSolution {
        grid: grid.clone(),
        nodes: nodes.to_vec(),
        values: rows,
        boundary: Boundary::Neumann,
        realization_id: real.id(),
        warnings,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelDistance {
    pub t: f64,
    /// `sqrt(sum (u_b - u_f)^2 / sum u_f^2)` over the probe nodes.
    pub l2_relative: f64,
    /// Root-mean-square difference over the probe nodes.
    pub l2: f64,
    pub linf: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossReport {
    pub probe_nodes: Vec<f64>,
    pub levels: Vec<LevelDistance>,
}

/// Compares the regression surfaces of `bdsde` with `fd` at every time level
/// the two grids share, on the FD nodes inside `probe`.
pub fn cross_validate<T: Real>(
    bdsde: &BackwardSolution<T>,
    fd: &FieldSolution<T>,
    probe: (f64, f64),
) -> Result<CrossReport> {
    if bdsde.realization_id() != fd.realization_id {
        return Err(Error::ContractViolation(format!(
            "solutions were built on different realizations ({:#x} vs {:#x})",
            bdsde.realization_id().0,
            fd.realization_id.0
        )));
    }
    if bdsde.dim() != 1 {
        return Err(invalid("cross-validation is one-dimensional"));
    }
    let idx: Vec<usize> =
        (0..fd.nodes.len()).filter(|&j| (probe.0..=probe.1).contains(&fd.nodes[j].as_f64())).collect();
    if idx.is_empty() {
        return Err(invalid("no finite-difference node inside the probe region"));
    }
    let mut levels = Vec::new();
    for k in 0..bdsde.grid().steps() {
        let t = bdsde.grid().time(k);
        let Some(kf) = fd.grid.index_of(t) else { continue };
        let (mut num, mut den, mut linf) = (0.0f64, 0.0f64, 0.0f64);
        for &j in &idx {
            let ub = bdsde.u(k, &fd.nodes[j..j + 1]).as_f64();
            let uf = fd.row(kf)[j].as_f64();
            num += (ub - uf).powi(2);
            den += uf * uf;
            linf = linf.max((ub - uf).abs());
        }
        levels.push(LevelDistance {
            t: t.as_f64(),
            l2_relative: (num / den.max(1e-300)).sqrt(),
            l2: (num / idx.len() as f64).sqrt(),
            linf,
        });
    }
    Ok(CrossReport { probe_nodes: idx.iter().map(|&j| fd.nodes[j].as_f64()).collect(), levels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bdsde_solver::{DriverFn, DriverTerm, TermKind};
    use crate::noise_field::{sample_increments, CovarianceKernel, PointRequest};
    use crate::oracles::heat_closed_form;

    fn setup(
        sigma: f64,
        kernel: CovarianceKernel<f64>,
        nodes: usize,
        steps: usize,
        t: f64,
        seed: u64,
    ) -> (SdeCoefficients<f64>, TimeGrid<f64>, Vec<f64>, FieldRealization<f64>, FdConfig) {
        let coeffs = SdeCoefficients::constant(1, 0.0, sigma);
        let cfg = FdConfig::new(nodes, (-2.0, 2.0));
        let grid = TimeGrid::uniform(0.0, t, steps).unwrap();
        let xs = fd_nodes(&coeffs, &cfg, t).unwrap();
        let mut req = PointRequest::new(1, steps);
        req.declare_everywhere(&xs);
        let real = sample_increments(&kernel, &grid, &req, seed).unwrap();
        (coeffs, grid, xs, real, cfg)
    }

    fn heat_error(nodes: usize, steps: usize) -> f64 {
        let sigma = 2f64.sqrt();
        let (coeffs, grid, xs, real, cfg) = setup(sigma, CovarianceKernel::constant(0.0).unwrap(), nodes, steps, 1.0, 1);
        let phi = TerminalCondition::bump(0.0, 1.0);
        let drv = Driver::for_kernel(DriverFn::zero(), DriverFn::zero(), real.kernel()).unwrap();
        let sol = solve_spde(&drv, &phi, &coeffs, &real, &grid, &xs, &cfg).unwrap();
        xs.iter()
            .enumerate()
            .map(|(j, x)| (sol.row(0)[j] - heat_closed_form(&phi, sigma * sigma, &[*x]).unwrap()).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn heat_flow_matches_closed_form() {
        let err = heat_error(400, 256);
        assert!(err <= 1e-3, "{err}");
    }

    #[test]
    fn joint_refinement_halves_error() {
        let (e1, e2) = (heat_error(200, 64), heat_error(400, 128));
        let r = e2 / e1;
        assert!((0.3..=0.7).contains(&r), "{e1} {e2} {r}");
    }

    #[test]
    fn terminal_row_is_exact() {
        let (coeffs, grid, xs, real, cfg) = setup(0.5, CovarianceKernel::constant(0.2).unwrap(), 50, 8, 0.5, 3);
        let phi = TerminalCondition::bump(0.3, 0.7);
        let drv = Driver::for_kernel(DriverFn::zero(), DriverFn::new(vec![DriverTerm::new(0.3, TermKind::Y)]), real.kernel())
            .unwrap();
        let sol = solve_spde(&drv, &phi, &coeffs, &real, &grid, &xs, &cfg).unwrap();
        for (j, x) in xs.iter().enumerate() {
            assert_eq!(sol.row(8)[j], phi.eval(&[*x]));
        }
    }

    #[test]
    fn additive_noise_telescopes_without_diffusion() {
        let (coeffs, grid, xs, real, cfg) = setup(0.0, CovarianceKernel::exponential(0.5, 0.3).unwrap(), 41, 16, 1.0, 5);
        let phi = TerminalCondition::bump(0.0, 1.0);
        let g = DriverFn::new(vec![DriverTerm::new(1.0, TermKind::Const)]);
        let drv = Driver::for_kernel(DriverFn::zero(), g, real.kernel()).unwrap();
        let sol = solve_spde(&drv, &phi, &coeffs, &real, &grid, &xs, &cfg).unwrap();
        for (j, x) in xs.iter().enumerate() {
            let want = phi.eval(&[*x]) + real.accumulate(&[*x], 0, 16).unwrap();
            assert!((sol.row(0)[j] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_discount_matches_integrating_factor() {
        let lambda = 0.7;
        let (coeffs, grid, xs, real, cfg) = setup(0.0, CovarianceKernel::constant(0.0).unwrap(), 21, 200, 1.0, 2);
        let phi = TerminalCondition::Constant { value: 2.0 };
        let f = DriverFn::new(vec![DriverTerm::new(-lambda, TermKind::Y)]);
        let drv = Driver::for_kernel(f, DriverFn::zero(), real.kernel()).unwrap();
        let sol = solve_spde(&drv, &phi, &coeffs, &real, &grid, &xs, &cfg).unwrap();
        let exact = 2.0 * (1.0 - lambda / 200.0f64).powi(200);
        assert!((sol.row(0)[10] - exact).abs() < 1e-12);
        assert!((sol.row(0)[10] - 2.0 * (-lambda).exp()).abs() < 5e-3);
    }

    #[test]
    fn linear_in_terminal_condition() {
        let (coeffs, grid, xs, real, cfg) = setup(0.8, CovarianceKernel::exponential(1.0, 0.2).unwrap(), 60, 20, 1.0, 9);
        let g = DriverFn::new(vec![DriverTerm::new(0.4, TermKind::Y)]);
        let f = DriverFn::new(vec![DriverTerm::new(-0.3, TermKind::Y), DriverTerm::new(0.2, TermKind::Z { index: 0 })]);
        let mut cfg = cfg;
        cfg.noise = NoiseIntegrator::Euler;
        let drv = Driver::for_kernel(f, g, real.kernel()).unwrap();
        let (p1, p2) = (TerminalCondition::bump(0.5, 0.6), TerminalCondition::Cosine { amplitude: 1.0, frequency: 1.3, phase: 0.2 });
        let sum = TerminalCondition::Sum { parts: vec![p1.clone(), p2.clone()] };
        let s1 = solve_spde(&drv, &p1, &coeffs, &real, &grid, &xs, &cfg).unwrap();
        let s2 = solve_spde(&drv, &p2, &coeffs, &real, &grid, &xs, &cfg).unwrap();
        let s = solve_spde(&drv, &sum, &coeffs, &real, &grid, &xs, &cfg).unwrap();
        for i in 0..s.values.len() {
            assert!((s.values[i] - s1.values[i] - s2.values[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn explicit_scheme_warns_past_stability_bound() {
        let (coeffs, grid, xs, real, mut cfg) = setup(1.0, CovarianceKernel::constant(0.0).unwrap(), 200, 10, 1.0, 1);
        cfg.scheme = FdScheme::Explicit;
        let drv = Driver::for_kernel(DriverFn::zero(), DriverFn::zero(), real.kernel()).unwrap();
        let sol = solve_spde(&drv, &TerminalCondition::bump(0.0, 1.0), &coeffs, &real, &grid, &xs, &cfg);
        match sol {
            Ok(s) => assert_eq!(s.warnings.len(), 1),
            Err(Error::Divergence { .. }) => {}
            Err(e) => panic!("{e}"),
        }
    }

    #[test]
    fn csv_has_one_row_per_level() {
        let (coeffs, grid, xs, real, cfg) = setup(1.0, CovarianceKernel::constant(0.1).unwrap(), 10, 4, 1.0, 1);
        let drv = Driver::for_kernel(DriverFn::zero(), DriverFn::zero(), real.kernel()).unwrap();
        let sol = solve_spde(&drv, &TerminalCondition::identity(), &coeffs, &real, &grid, &xs, &cfg).unwrap();
        let csv = sol.to_csv();
        assert_eq!(csv.lines().count(), 6);
        assert_eq!(csv.lines().nth(1).unwrap().split(',').count(), 11);
        assert_eq!(sol.manifest(&real)["realization_id"], real.id().0);
    }
}
