use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bdsde_solver::{Driver, DriverFn, DriverTerm, TermKind, TerminalCondition};
use crate::error::{invalid, Result};
use crate::forward_sde::PathBundle;
use crate::kunita_calculus::{align, increments_along};
use crate::noise_field::FieldRealization;
use crate::scalar::Real;
use crate::stats::Estimate;

/// Linear driver `f = alpha y + h`, `g = beta y` with constant coefficients.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearDriver {
    pub h: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl LinearDriver {
    pub fn to_driver(&self, q_bound: f64) -> Result<Driver> {
        let f = DriverFn::new(vec![DriverTerm::new(self.alpha, TermKind::Y), DriverTerm::new(self.h, TermKind::Const)]);
        let g = DriverFn::new(vec![DriverTerm::new(self.beta, TermKind::Y)]);
        Driver::new(f, g, q_bound)
    }
}

/// Per-step exponents `alpha dt + beta dB_k(X_{k+1}) - beta^2 q(t_k, X_k, X_k) dt / 2`
/// of the linear solution's multiplier, for every path.
#[derive(Clone, Debug, PartialEq)]
pub struct GammaTable<T> {
    n_steps: usize,
    n_paths: usize,
    exponents: Vec<T>,
    /// Set when some exponent sum had to be capped to stay finite.
    pub clamped: bool,
}

pub fn gamma_functional<T: Real>(
    driver: &LinearDriver,
    bundle: &PathBundle<T>,
    real: &FieldRealization<T>,
) -> Result<GammaTable<T>> {
    let o = align(real, bundle)?;
    let grid = bundle.grid();
    let n = grid.steps();
    let m = bundle.n_paths();
    let db = if driver.beta != 0.0 { increments_along(real, bundle)? } else { vec![T::zero(); n * m] };
    let (a, b) = (T::lit(driver.alpha), T::lit(driver.beta));
    let half = T::lit(0.5);
    let kernel = real.kernel();
    let exponents: Vec<T> = (0..n * m)
        .into_par_iter()
        .map(|i| {
            let (k, p) = (i / m, i % m);
            let dt = grid.dt(k);
            let mut e = a * dt;
            if driver.beta != 0.0 {
                let x = bundle.state(k, p);
                e += b * db[i] - half * b * b * kernel.eval_unchecked(real.grid().time(o + k), x, x) * dt;
            }
            e
        })
        .collect();
    Ok(GammaTable { n_steps: n, n_paths: m, exponents, clamped: false })
}

impl<T: Real> GammaTable<T> {
    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    /// `log Gamma_s^r` on path `p` (`s <= r` as step indices).
    pub fn log_gamma(&self, s: usize, r: usize, p: usize) -> T {
        (s..r).map(|k| self.exponents[k * self.n_paths + p]).sum()
    }

    /// `Gamma_s^r` with the exponent capped; the second value reports a cap.
    pub fn gamma(&self, s: usize, r: usize, p: usize) -> (T, bool) {
        let e = self.log_gamma(s, r, p);
        let cap = T::exp_cap();
        if e > cap {
            (cap.exp(), true)
        } else {
            (e.exp(), false)
        }
    }

    /// `Gamma_s^T` for every path.
    pub fn terminal_factors(&mut self, s: usize) -> Vec<T> {
        let n = self.n_steps;
        let out: Vec<(T, bool)> = (0..self.n_paths).map(|p| self.gamma(s, n, p)).collect();
        self.clamped |= out.iter().any(|(_, c)| *c);
        out.into_iter().map(|(g, _)| g).collect()
    }
}

/// Pathwise linear solution `phi(X_T) Gamma_0^T + sum_k Gamma_0^{t_k} h dt`
/// averaged over the bundle: an estimate of `Y_0` for any forward dynamics.
pub fn linear_solution<T: Real>(
    driver: &LinearDriver,
    terminal: &TerminalCondition,
    bundle: &PathBundle<T>,
    real: &FieldRealization<T>,
) -> Result<(Estimate, bool)> {
    let table = gamma_functional(driver, bundle, real)?;
    let n = table.n_steps;
    let grid = bundle.grid();
    let d = bundle.dim();
    let h = T::lit(driver.h);
    let rows: Vec<(T, bool)> = (0..bundle.n_paths())
        .into_par_iter()
        .map(|p| {
            let mut clamped = false;
            let mut acc = T::zero();
            let mut log = T::zero();
            for k in 0..n {
                log += table.exponents[k * table.n_paths + p];
                acc += log.min(T::exp_cap()).exp() * h * grid.dt(k);
            }
            clamped |= log > T::exp_cap();
            let phi = terminal.eval(&bundle.terminal_states()[p * d..(p + 1) * d]);
            (phi * log.min(T::exp_cap()).exp() + acc, clamped)
        })
        .collect();
    if rows.is_empty() {
        return Err(invalid("empty bundle"));
    }
    let clamped = rows.iter().any(|r| r.1);
    let vals: Vec<T> = rows.into_iter().map(|r| r.0).collect();
    Ok((Estimate::from_samples(&vals), clamped))
}
