use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::basis::{BasisKind, Design, Surface};
use super::driver::Driver;
use super::terminal::TerminalCondition;
use crate::container;
use crate::error::{invalid, Error, Result};
use crate::forward_sde::PathBundle;
use crate::grid::TimeGrid;
use crate::kunita_calculus::{align, increments_along, NoiseIntegrator};
use crate::noise_field::{FieldRealization, RealizationId};
use crate::scalar::Real;
use crate::stats::Estimate;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scheme {
    /// Driver arguments at the right endpoint of each step.
    #[default]
    Explicit,
    /// `f` re-evaluated at the step's own regressands `n_inner` times.
    Implicit { n_inner: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct SolverConfig {
    #[serde(default)]
    pub basis: BasisKind,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default)]
    pub noise: NoiseIntegrator,
}

/// Discrete `(Y, Z)` on the ensemble with the per-step regression surfaces.
#[derive(Clone, Debug, PartialEq)]
pub struct BackwardSolution<T> {
    grid: TimeGrid<T>,
    dim: usize,
    n_paths: usize,
    /// `(N+1) * M`, step-major.
    y: Vec<T>,
    /// `N * M * d`, step-major.
    z: Vec<T>,
    /// Step `k` maps `x` to `(u(t_k, x), z_0(t_k, x), ...)`.
    surfaces: Vec<Surface<T>>,
    realization_id: RealizationId,
    /// Mean of `Y_0` with the standard error of the pathwise estimator.
    y0: Estimate,
}

/// Per-step quantities shared by every backward pass on a bundle.
pub(crate) struct StepData<T> {
    pub db: Vec<T>,
    pub dq: Vec<T>,
}

pub(crate) fn step_data<T: Real>(real: &FieldRealization<T>, bundle: &PathBundle<T>) -> Result<StepData<T>> {
    let o = align(real, bundle)?;
    let db = increments_along(real, bundle)?;
    let m = bundle.n_paths();
    let n = bundle.grid().steps();
    let kernel = real.kernel();
    let dq = (0..n * m)
        .into_par_iter()
        .map(|i| {
            let (k, p) = (i / m, i % m);
            let x = bundle.state(k + 1, p);
            kernel.eval_unchecked(real.grid().time(o + k), x, x) * bundle.grid().dt(k)
        })
        .collect();
    Ok(StepData { db, dq })
}

fn check_finite<T: Real>(v: &[T], step: usize) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(path) => Err(Error::Divergence { step, path }),
        None => Ok(()),
    }
}

/// Regresses `y_next` and the martingale increments against `X_k`; returns
/// the projection of `y_next`, the per-path `Z_k` (`M*d`) and the `Z`
/// coefficients. `(Y_{k+1} - E_k Y_{k+1}) dW / dt` is regressed instead of
/// `Y_{k+1} dW / dt`; both have the same conditional mean.
pub(crate) fn z_step<T: Real>(
    design: &Design<'_, T>,
    y_next: &[T],
    dw: &[T],
    dim: usize,
    dt: T,
) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    let c0 = design.fit(&[y_next])?;
    let proj = design.fitted(&c0, 1, 0);
    let m = y_next.len();
    let targets: Vec<Vec<T>> =
        (0..dim).map(|j| (0..m).map(|p| (y_next[p] - proj[p]) * dw[p * dim + j] / dt).collect()).collect();
    let refs: Vec<&[T]> = targets.iter().map(|t| t.as_slice()).collect();
    let cz = design.fit(&refs)?;
    let mut z = vec![T::zero(); m * dim];
    for j in 0..dim {
        for (p, v) in design.fitted(&cz, dim, j).into_iter().enumerate() {
            z[p * dim + j] = v;
        }
    }
    Ok((proj, z, cz))
}

fn merge_coeffs<T: Real>(cy: &[T], cz: &[T], p: usize, dim: usize) -> Vec<T> {
    let nr = 1 + dim;
    let mut out = vec![T::zero(); p * nr];
    for i in 0..p {
        out[i * nr] = cy[i];
        for j in 0..dim {
            out[i * nr + 1 + j] = cz[i * dim + j];
        }
    }
    out
}

/// Least-squares Monte Carlo solution of the backward doubly stochastic
/// equation on one bundle and one fixed field realization.
///
/// Step `k` only reads `X_k`, `X_{k+1}`, `dW_k` and the field increment of
/// step `k`, so `Y_k` depends on the field only through increments after
/// `t_k`.
pub fn solve<T: Real>(
    driver: &Driver,
    terminal: &TerminalCondition,
    bundle: &PathBundle<T>,
    real: &FieldRealization<T>,
    cfg: &SolverConfig,
) -> Result<BackwardSolution<T>> {
    let sd = step_data(real, bundle)?;
    let grid = bundle.grid();
    let n = grid.steps();
    let m = bundle.n_paths();
    let d = bundle.dim();
    if driver.dim_requirement() > d {
        return Err(invalid("driver refers to coordinates beyond the state dimension"));
    }
    let mut y = vec![T::zero(); (n + 1) * m];
    let mut z = vec![T::zero(); n * m * d];
    let yn: Vec<T> = bundle.terminal_states().par_chunks(d).map(|x| terminal.eval(x)).collect();
    check_finite(&yn, n)?;
    y[n * m..].copy_from_slice(&yn);
    let mut v = yn;
    let mut surfaces = Vec::with_capacity(n);
    let f = &driver.f;
    let g = &driver.g;
    for k in (0..n).rev() {
        let (t0, t1, dt) = (grid.time(k), grid.time(k + 1), grid.dt(k));
        let xs0 = bundle.states_at(k);
        let xs1 = bundle.states_at(k + 1);
        let dw = bundle.increments_at(k);
        let y_next = y[(k + 1) * m..(k + 2) * m].to_vec();
        let design = Design::new(cfg.basis, xs0, d, k)?;
        let (_, zk, cz) = z_step(&design, &y_next, dw, d, dt)?;
        let db = &sd.db[k * m..(k + 1) * m];
        let dq = &sd.dq[k * m..(k + 1) * m];
        let noise_part: Vec<T> = (0..m)
            .into_par_iter()
            .map(|p| {
                let (x1, zp) = (&xs1[p * d..(p + 1) * d], &zk[p * d..(p + 1) * d]);
                let gv = g.eval(t1, x1, y_next[p], zp);
                cfg.noise.step(gv, g.dy(t1, y_next[p]), db[p], dq[p])
            })
            .collect();
        let mut target: Vec<T> = (0..m)
            .into_par_iter()
            .map(|p| {
                let (x1, zp) = (&xs1[p * d..(p + 1) * d], &zk[p * d..(p + 1) * d]);
                y_next[p] + f.eval(t1, x1, y_next[p], zp) * dt + noise_part[p]
            })
            .collect();
        check_finite(&target, k)?;
        let mut cy = design.fit(&[&target])?;
        let mut yk = design.fitted(&cy, 1, 0);
        if let Scheme::Implicit { n_inner } = cfg.scheme {
            for _ in 0..n_inner {
                target = (0..m)
                    .into_par_iter()
                    .map(|p| {
                        let (x0, zp) = (&xs0[p * d..(p + 1) * d], &zk[p * d..(p + 1) * d]);
                        y_next[p] + f.eval(t0, x0, yk[p], zp) * dt + noise_part[p]
                    })
                    .collect();
                check_finite(&target, k)?;
                cy = design.fit(&[&target])?;
                yk = design.fitted(&cy, 1, 0);
            }
        }
        check_finite(&yk, k)?;
        // Pathwise estimator of Y_0 for the standard error.
        v = (0..m)
            .into_par_iter()
            .map(|p| {
                let (x1, zp) = (&xs1[p * d..(p + 1) * d], &zk[p * d..(p + 1) * d]);
                let gv = g.eval(t1, x1, v[p], zp);
                v[p] + f.eval(t1, x1, v[p], zp) * dt + cfg.noise.step(gv, g.dy(t1, v[p]), db[p], dq[p])
            })
            .collect();
        y[k * m..(k + 1) * m].copy_from_slice(&yk);
        z[k * m * d..(k + 1) * m * d].copy_from_slice(&zk);
        let p = design.map().len();
        surfaces.push(design.surface(merge_coeffs(&cy, &cz, p, d), 1 + d));
    }
    surfaces.reverse();
    let mean = Estimate::from_samples(&y[..m]).mean;
    let proxy = Estimate::from_samples(&v);
    Ok(BackwardSolution {
        grid: grid.clone(),
        dim: d,
        n_paths: m,
        y,
        z,
        surfaces,
        realization_id: real.id(),
        y0: Estimate { mean, stderr: proxy.stderr, n: m },
    })
}

impl<T: Real> BackwardSolution<T> {
    pub fn grid(&self) -> &TimeGrid<T> {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn realization_id(&self) -> RealizationId {
        self.realization_id
    }

    pub fn y_at(&self, k: usize) -> &[T] {
        &self.y[k * self.n_paths..(k + 1) * self.n_paths]
    }

    pub fn z_at(&self, k: usize) -> &[T] {
        let s = self.n_paths * self.dim;
        &self.z[k * s..(k + 1) * s]
    }

    pub fn surfaces(&self) -> &[Surface<T>] {
        &self.surfaces
    }

    /// `Y_0` over the paths, with the standard error of the estimator.
    pub fn y0(&self) -> Estimate {
        self.y0
    }

    /// `u(t_k, x)` from the step-`k` surface (`k < N`).
    pub fn u(&self, k: usize, x: &[T]) -> T {
        self.surfaces[k].eval(0, x)
    }

    /// Regression `Z` at `(t_k, x)`.
    pub fn z_surface(&self, k: usize, x: &[T], out: &mut [T]) {
        for (j, o) in out.iter_mut().enumerate() {
            *o = self.surfaces[k].eval(1 + j, x);
        }
    }

    /// Gradient of the step-`k` value surface.
    pub fn grad_u(&self, k: usize, x: &[T], out: &mut [T]) {
        self.surfaces[k].gradient(0, x, out)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = json!({
            "kind": "backward_solution",
            "grid": self.grid.times().iter().map(|t| t.as_f64()).collect::<Vec<_>>(),
            "dim": self.dim,
            "n_paths": self.n_paths,
            "realization_id": self.realization_id.0,
            "y0": self.y0,
            "surfaces": serde_json::to_value(&self.surfaces)?,
        });
        let mut payload: Vec<f64> = self.y.iter().map(|v| v.as_f64()).collect();
        payload.extend(self.z.iter().map(|v| v.as_f64()));
        container::to_bytes(&header, &payload)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (h, payload) = container::read_container(bytes)?;
        container::expect_kind(&h, "backward_solution")?;
        let field = |k: &str| h.get(k).cloned().ok_or_else(|| Error::Format(format!("missing {k}")));
        let times: Vec<f64> = serde_json::from_value(field("grid")?)?;
        let grid = TimeGrid::new(times.into_iter().map(T::lit).collect())?;
        let dim: usize = serde_json::from_value(field("dim")?)?;
        let n_paths: usize = serde_json::from_value(field("n_paths")?)?;
        let n = grid.steps();
        let ny = (n + 1) * n_paths;
        if payload.len() != ny + n * n_paths * dim {
            return Err(Error::Format("backward solution payload has the wrong length".into()));
        }
        Ok(Self {
            grid,
            dim,
            n_paths,
            y: payload[..ny].iter().map(|&v| T::lit(v)).collect(),
            z: payload[ny..].iter().map(|&v| T::lit(v)).collect(),
            surfaces: serde_json::from_value(field("surfaces")?)?,
            realization_id: RealizationId(serde_json::from_value(field("realization_id")?)?),
            y0: serde_json::from_value(field("y0")?)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub p: f64,
    /// `E sup_k |Y_k|^{2p}`
    pub sup_y: Estimate,
    /// `E (sum_k |Z_k|^2 dt_k)^p`
    pub z_energy: Estimate,
}

impl MomentReport {
    /// Relative change of both estimates against a report on a refined grid.
    pub fn refinement_ratio(&self, finer: &MomentReport) -> (f64, f64) {
        (
            (finer.sup_y.mean - self.sup_y.mean).abs() / self.sup_y.mean.abs().max(1e-300),
            (finer.z_energy.mean - self.z_energy.mean).abs() / self.z_energy.mean.abs().max(1e-300),
        )
    }

    /// Flags growth beyond `tol` between refinement levels.
    pub fn stable_against(&self, finer: &MomentReport, tol: f64) -> bool {
        let (a, b) = self.refinement_ratio(finer);
        a <= tol && b <= tol
    }
}

pub fn moment_report<T: Real>(solution: &BackwardSolution<T>, p: f64) -> Result<MomentReport> {
    if !(p > 1.0) {
        return Err(invalid("moment exponent must exceed one"));
    }
    let m = solution.n_paths;
    let n = solution.grid.steps();
    let d = solution.dim;
    let (sup, energy): (Vec<f64>, Vec<f64>) = (0..m)
        .into_par_iter()
        .map(|i| {
            let sup = (0..=n).map(|k| solution.y[k * m + i].as_f64().abs()).fold(0.0, f64::max);
            let e: f64 = (0..n)
                .map(|k| {
                    let z = &solution.z[(k * m + i) * d..(k * m + i + 1) * d];
                    z.iter().map(|v| v.as_f64().powi(2)).sum::<f64>() * solution.grid.dt(k).as_f64()
                })
                .sum();
            (sup.powf(2.0 * p), e.powf(p))
        })
        .unzip();
    Ok(MomentReport { p, sup_y: Estimate::from_samples(&sup), z_energy: Estimate::from_samples(&energy) })
}
