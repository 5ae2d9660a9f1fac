use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::gamma::{gamma_functional, LinearDriver};
use crate::bdsde_solver::TerminalCondition;
use crate::error::{invalid, Result};
use crate::forward_sde::{simulate, DiffusionFamily, DriftFamily, InitialState, PathBundle, SdeCoefficients};
use crate::grid::TimeGrid;
use crate::noise_field::FieldRealization;
use crate::scalar::Real;
use crate::stats::Estimate;

/// Oracle output record.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleEstimate {
    pub mean: f64,
    pub stderr: f64,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "N")]
    pub n: usize,
}

impl OracleEstimate {
    pub fn estimate(&self) -> Estimate {
        Estimate { mean: self.mean, stderr: self.stderr, n: self.m }
    }
}

/// Brownian paths `x + W_s - W_t` on `grid` for the explicit estimator.
pub fn brownian_bundle<T: Real>(x: &[T], grid: &TimeGrid<T>, n_paths: usize, seed: u64) -> Result<PathBundle<T>> {
    simulate(&SdeCoefficients::brownian(x.len()), InitialState::point(x.to_vec()), grid, n_paths, seed, false)
}

/// `E_W[phi(x + W_T - W_t) exp(int <-B(dr, x + W_r - W_t) - 1/2 int q dr)]`
/// with the field held fixed. `paths` must be Brownian paths from `x`
/// (see [`brownian_bundle`]) whose positions were declared on `real`.
pub fn explicit_linear_fk<T: Real>(
    terminal: &TerminalCondition,
    real: &FieldRealization<T>,
    paths: &PathBundle<T>,
) -> Result<OracleEstimate> {
    let mut table = gamma_functional(&LinearDriver { h: 0.0, alpha: 0.0, beta: 1.0 }, paths, real)?;
    let factors = table.terminal_factors(0);
    let d = paths.dim();
    let vals: Vec<T> = paths
        .terminal_states()
        .par_chunks(d)
        .zip(factors.par_iter())
        .map(|(x, g)| terminal.eval(x) * *g)
        .collect();
    let e = Estimate::from_samples(&vals);
    Ok(OracleEstimate { mean: e.mean, stderr: e.stderr, m: paths.n_paths(), n: paths.grid().steps() })
}

/// Gauss-Hermite nodes and weights for `int e^{-t^2} f(t) dt`.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let pim4 = std::f64::consts::PI.powf(-0.25);
    let m = n.div_ceil(2);
    let mut z = 0.0f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * n as f64 + 1.0).sqrt() - 1.85575 * (2.0 * n as f64 + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * (n as f64).powf(0.426) / z,
            2 => 1.86 * z - 0.86 * nodes[0],
            3 => 1.91 * z - 0.91 * nodes[1],
            _ => 2.0 * z - nodes[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                p1 = z * (2.0 / (j as f64 + 1.0)).sqrt() * p2 - (j as f64 / (j as f64 + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * n as f64).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 {
                break;
            }
        }
        nodes[i] = z;
        nodes[n - 1 - i] = -z;
        weights[i] = 2.0 / (pp * pp);
        weights[n - 1 - i] = weights[i];
    }
    (nodes, weights)
}

fn is_standard_brownian<T: Real>(c: &SdeCoefficients<T>) -> bool {
    let d = c.dim;
    matches!(c.drift, DriftFamily::Zero)
        && match &c.diffusion {
            DiffusionFamily::Constant { matrix } => (0..d * d)
                .all(|i| matrix[i].as_f64() == if i / d == i % d { 1.0 } else { 0.0 }),
            _ => false,
        }
}

/// Options for the Monte Carlo fallback of [`deterministic_fk`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FkOptions {
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
    pub quadrature_nodes: usize,
}

impl Default for FkOptions {
    fn default() -> Self {
        Self { n_paths: 200_000, n_steps: 200, seed: 7, quadrature_nodes: 64 }
    }
}

/// `e^{lambda (T-t)} E[phi(X_T^{t,x})]` for `f = lambda y`, `g = 0`.
///
/// Closed forms for Gaussian bumps and cosines, Gauss-Hermite quadrature
/// for other terminals in one dimension when `b = 0`, `sigma = I`; Monte
/// Carlo otherwise.
pub fn deterministic_fk<T: Real>(
    terminal: &TerminalCondition,
    lambda: f64,
    coeffs: &SdeCoefficients<T>,
    t: f64,
    horizon: f64,
    x: &[f64],
    opts: &FkOptions,
) -> Result<OracleEstimate> {
    if !(horizon >= t) {
        return Err(invalid("horizon precedes the start time"));
    }
    let tau = horizon - t;
    let disc = (lambda * tau).exp();
    let exact = |v: f64| Ok(OracleEstimate { mean: disc * v, stderr: 0.0, m: 0, n: 0 });
    if is_standard_brownian(coeffs) {
        if let Some(v) = heat_closed_form(terminal, tau, x) {
            return exact(v);
        }
        if x.len() == 1 {
            let (nodes, weights) = gauss_hermite(opts.quadrature_nodes);
            let s = (2.0 * tau).sqrt();
            let v: f64 = nodes
                .iter()
                .zip(&weights)
                .map(|(z, w)| w * terminal.eval(&[x[0] + s * z]))
                .sum::<f64>()
                / std::f64::consts::PI.sqrt();
            return exact(v);
        }
    }
    if tau == 0.0 {
        return exact(terminal.eval(x));
    }
    let grid = TimeGrid::uniform(T::lit(t), T::lit(horizon), opts.n_steps)?;
    let xt: Vec<T> = x.iter().map(|&v| T::lit(v)).collect();
    let b = simulate(coeffs, InitialState::point(xt), &grid, opts.n_paths, opts.seed, false)?;
    let vals: Vec<T> = b.terminal_states().par_chunks(x.len()).map(|y| terminal.eval(y) * T::lit(disc)).collect();
    let e = Estimate::from_samples(&vals);
    Ok(OracleEstimate { mean: e.mean, stderr: e.stderr, m: opts.n_paths, n: opts.n_steps })
}

/// `E[phi(x + sqrt(tau) xi)]` in closed form where one exists.
pub fn heat_closed_form(terminal: &TerminalCondition, tau: f64, x: &[f64]) -> Option<f64> {
    match terminal {
        TerminalCondition::Zero => Some(0.0),
        TerminalCondition::Constant { value } => Some(*value),
        TerminalCondition::GaussianBump { center, width, height } => {
            let w2 = width * width;
            let s2 = w2 + tau;
            let r2: f64 = x.iter().zip(center).map(|(a, b)| (a - b).powi(2)).sum();
            Some(height * (w2 / s2).powf(x.len() as f64 / 2.0) * (-r2 / (2.0 * s2)).exp())
        }
        TerminalCondition::Cosine { amplitude, frequency, phase } => {
            Some(amplitude * (frequency * x[0] + phase).cos() * (-0.5 * frequency * frequency * tau).exp())
        }
        TerminalCondition::Sum { parts } => parts.iter().map(|p| heat_closed_form(p, tau, x)).sum(),
        TerminalCondition::PolynomialClamped { .. } => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hermite_rule_integrates_moments() {
        let (z, w) = gauss_hermite(20);
        let sp = std::f64::consts::PI.sqrt();
        let m0: f64 = w.iter().sum::<f64>() / sp;
        let m2: f64 = z.iter().zip(&w).map(|(z, w)| w * 2.0 * z * z).sum::<f64>() / sp;
        let m4: f64 = z.iter().zip(&w).map(|(z, w)| w * 4.0 * z.powi(4)).sum::<f64>() / sp;
        assert!((m0 - 1.0).abs() < 1e-13 && (m2 - 1.0).abs() < 1e-13 && (m4 - 3.0).abs() < 1e-12);
    }

    #[test]
    fn quadrature_matches_closed_form_bump() {
        let phi = TerminalCondition::bump(0.3, 0.5);
        let exact = heat_closed_form(&phi, 0.8, &[0.1]).unwrap();
        let (z, w) = gauss_hermite(64);
        let s = (1.6f64).sqrt();
        let q: f64 = z.iter().zip(&w).map(|(z, w)| w * phi.eval(&[0.1 + s * z])).sum::<f64>() / std::f64::consts::PI.sqrt();
        assert!((q - exact).abs() < 1e-12);
    }

    #[test]
    fn trivial_reductions() {
        let c = SdeCoefficients::<f64>::brownian(1);
        let o = FkOptions::default();
        let v = deterministic_fk(&TerminalCondition::identity(), 0.0, &c, 0.0, 1.0, &[0.4], &o).unwrap();
        assert!((v.mean - 0.4).abs() < 1e-3);
        let v = deterministic_fk(&TerminalCondition::Constant { value: 1.0 }, -1.0, &c, 0.0, 1.0, &[0.0], &o).unwrap();
        assert!((v.mean - (-1.0f64).exp()).abs() < 1e-15);
    }
}
