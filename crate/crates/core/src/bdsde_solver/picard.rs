use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::basis::{BasisKind, Design};
use super::driver::Driver;
use super::solver::{step_data, z_step};
use super::terminal::TerminalCondition;
use crate::error::{invalid, Result};
use crate::forward_sde::PathBundle;
use crate::kunita_calculus::align;
use crate::noise_field::FieldRealization;
use crate::scalar::Real;
use crate::stats::median;

/// Parameters of the exponentially weighted norm used as contraction metric.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedNormConfig {
    pub beta: f64,
    /// Weight of the `z` part relative to the `y` part.
    pub z_weight: f64,
    /// Free parameter `a` of the recipe, with `K a + alpha < 1`.
    pub a: f64,
    /// Contraction constant `K a + alpha` predicted by the recipe.
    pub rho: f64,
}

impl WeightedNormConfig {
    /// `beta = 2/a + K(a+1)/(K a + alpha)` with `a = (1 - alpha)/(2K)`, and
    /// the `z` weight `(K a + alpha)/(K(a+1))`.
    pub fn from_driver(driver: &Driver) -> Result<Self> {
        let (k, alpha) = (driver.lipschitz_k, driver.alpha);
        if !(alpha < 1.0) {
            return Err(invalid("weighted norm needs alpha < 1"));
        }
        if k == 0.0 {
            return Ok(Self { beta: 2.0, z_weight: 1.0, a: 1.0, rho: alpha });
        }
        let a = (1.0 - alpha) / (2.0 * k);
        let rho = k * a + alpha;
        Ok(Self { beta: 2.0 / a + k * (a + 1.0) / rho, z_weight: rho / (k * (a + 1.0)), a, rho })
    }

    pub fn with_beta(beta: f64, z_weight: f64) -> Result<Self> {
        if !(beta > 0.0) {
            return Err(invalid("beta must be positive"));
        }
        Ok(Self { beta, z_weight, a: f64::NAN, rho: f64::NAN })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContractionReport {
    pub norm: WeightedNormConfig,
    /// Squared weighted distances between successive iterates, from
    /// `|Psi(0) - 0|` onwards.
    pub distances: Vec<f64>,
    /// `distances[n+1] / distances[n]`.
    pub ratios: Vec<f64>,
    pub median_ratio: f64,
}

/// Squared weighted distance between two `(y, z)` fields on the bundle:
/// `E sum_k dt [qt_k w_k |dy_k|^2 + c w_k |dz_k|^2]` with
/// `w_k = exp(beta int_{t_k}^T qt)` and `qt = max(q(t, X, X), 1)`.
fn weighted_distance(
    weights: &[(f64, f64)],
    dy: impl Fn(usize) -> f64 + Sync,
    dz: impl Fn(usize) -> f64 + Sync,
    m: usize,
    n: usize,
    dts: &[f64],
    c: f64,
) -> f64 {
    let per: Vec<f64> = (0..m)
        .into_par_iter()
        .map(|p| {
            (0..n)
                .map(|k| {
                    let (qt, w) = weights[k * m + p];
                    dts[k] * w * (qt * dy(k * m + p) + c * dz(k * m + p))
                })
                .sum()
        })
        .collect();
    per.iter().sum::<f64>() / m as f64
}

/// Runs `(Y^0, Z^0) = 0`, `(Y^n, Z^n) = Psi(Y^{n-1}, Z^{n-1})` where `Psi`
/// is one backward regression pass with the driver arguments frozen at the
/// previous iterate, and records the weighted distances.
#[allow(clippy::too_many_arguments)]
pub fn picard_monitor<T: Real>(
    driver: &Driver,
    terminal: &TerminalCondition,
    bundle: &PathBundle<T>,
    real: &FieldRealization<T>,
    basis: BasisKind,
    n_iter: usize,
    norm: WeightedNormConfig,
) -> Result<ContractionReport> {
    let o = align(real, bundle)?;
    let sd = step_data(real, bundle)?;
    let grid = bundle.grid();
    let n = grid.steps();
    let m = bundle.n_paths();
    let d = bundle.dim();
    let dts: Vec<f64> = (0..n).map(|k| grid.dt(k).as_f64()).collect();
    // (qt_k, w_k) per step and path.
    let kernel = real.kernel();
    let qt = |k: usize, p: usize| kernel.diag(real.grid().time(o + k), bundle.state(k, p)).as_f64().max(1.0);
    let mut weights = vec![(0.0, 0.0); n * m];
    for p in 0..m {
        let mut integral = 0.0;
        let mut right = qt(n, p);
        for k in (0..n).rev() {
            let left = qt(k, p);
            integral += 0.5 * (left + right) * dts[k];
            weights[k * m + p] = (left, (norm.beta * integral).exp());
            right = left;
        }
    }
    let terminal_y: Vec<T> = bundle.terminal_states().par_chunks(d).map(|x| terminal.eval(x)).collect();
    let designs: Vec<Design<'_, T>> =
        (0..n).map(|k| Design::new(basis, bundle.states_at(k), d, k)).collect::<Result<_>>()?;

    let mut y_prev = vec![T::zero(); (n + 1) * m];
    let mut z_prev = vec![T::zero(); n * m * d];
    let mut distances = Vec::with_capacity(n_iter);
    for _ in 0..n_iter {
        let mut y = vec![T::zero(); (n + 1) * m];
        let mut z = vec![T::zero(); n * m * d];
        y[n * m..].copy_from_slice(&terminal_y);
        for k in (0..n).rev() {
            let t1 = grid.time(k + 1);
            let dt = grid.dt(k);
            let xs1 = bundle.states_at(k + 1);
            let y_next = y[(k + 1) * m..(k + 2) * m].to_vec();
            let (_, zk, _) = z_step(&designs[k], &y_next, bundle.increments_at(k), d, dt)?;
            let target: Vec<T> = (0..m)
                .into_par_iter()
                .map(|p| {
                    let x1 = &xs1[p * d..(p + 1) * d];
                    let (yf, zf) = (y_prev[(k + 1) * m + p], &z_prev[(k * m + p) * d..(k * m + p + 1) * d]);
                    y_next[p] + driver.f.eval(t1, x1, yf, zf) * dt + driver.g.eval(t1, x1, yf, zf) * sd.db[k * m + p]
                })
                .collect();
            let c = designs[k].fit(&[&target])?;
            let yk = designs[k].fitted(&c, 1, 0);
            y[k * m..(k + 1) * m].copy_from_slice(&yk);
            z[k * m * d..(k + 1) * m * d].copy_from_slice(&zk);
        }
        let dist = weighted_distance(
            &weights,
            |i| (y[i] - y_prev[i]).as_f64().powi(2),
            |i| (0..d).map(|j| (z[i * d + j] - z_prev[i * d + j]).as_f64().powi(2)).sum(),
            m,
            n,
            &dts,
            norm.z_weight,
        );
        distances.push(dist);
        y_prev = y;
        z_prev = z;
    }
    let ratios: Vec<f64> = distances
        .windows(2)
        .map(|w| if w[0] == 0.0 && w[1] == 0.0 { 0.0 } else { w[1] / w[0] })
        .collect();
    let median_ratio = if ratios.is_empty() { f64::NAN } else { median(&ratios) };
    Ok(ContractionReport { norm, distances, ratios, median_ratio })
}
