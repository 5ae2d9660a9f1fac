use serde::{Deserialize, Serialize};

use super::{check_probes, probe_bundle, shift_realization, solve_truncated, HorizonParams, ROUNDING_FLOOR};
use crate::bdsde_solver::Driver;
use crate::error::{Error, Result};
use crate::forward_sde::SdeCoefficients;
use crate::kunita_calculus::request_along_paths;
use crate::noise_field::{sample_increments, CovarianceKernel, PointRequest};
use crate::rng::derive_seed;
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeriodicityEntry {
    pub t: f64,
    pub probe: Vec<f64>,
    /// `u(t + tau, x)` from the original noise.
    pub later: f64,
    /// `u'(t, x)` from the noise shifted by `tau`.
    pub shifted: f64,
    pub discrepancy: f64,
    pub combined_stderr: f64,
    /// Truncation scale `e^{-margin H}`. Both sides see the same increments
    /// over matched horizons, so it is reported but not added to the tolerance.
    pub truncation: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeriodicityReport {
    pub tau: f64,
    pub horizon: f64,
    pub margin: f64,
    pub entries: Vec<PeriodicityEntry>,
    pub max_discrepancy: f64,
    pub pass: bool,
}

/// Compares `u(t + tau, x)` computed from a realization with `u'(t, x)`
/// computed from the same realization shifted by `tau`. Both use the last
/// ladder entry as truncation length and independent forward paths.
pub fn verify_periodicity<T: Real>(
    driver: &Driver,
    coeffs: &SdeCoefficients<T>,
    kernel: &CovarianceKernel<T>,
    params: &HorizonParams,
    probes: &[Vec<T>],
    check_times: &[f64],
    seed: u64,
) -> Result<PeriodicityReport> {
    params.validate()?;
    let tau = match (driver.tau, params.tau) {
        (Some(t), _) => t,
        (None, Some(t)) if driver.is_time_independent() => t,
        (None, None) if driver.is_time_independent() => {
            return Err(Error::Precondition("time-independent driver needs an explicit period".into()))
        }
        _ => return Err(Error::Precondition("driver is not periodic in time".into())),
    };
    if kernel.is_time_dependent() {
        return Err(Error::Precondition("periodicity check needs a time-independent kernel".into()));
    }
    let margin = params.require_margin(driver, kernel)?;
    check_probes(probes, coeffs.dim)?;
    let horizon = *params.ladder.last().unwrap();
    let (nh, ntau) = (params.steps_for(horizon)?, params.steps_for(tau)?);
    let offsets: Vec<usize> = check_times.iter().map(|&t| params.steps_for(t)).collect::<Result<_>>()?;
    let last = offsets.iter().copied().max().unwrap_or(0);
    let base = params.grid::<T>(0, last + ntau + nh)?;

    let seed_for = |side: &str, i: usize, j: usize| derive_seed(seed, side, (i * check_times.len() + j) as u64);
    let mut runs = Vec::new();
    let mut req = PointRequest::new(coeffs.dim, base.steps());
    for (i, x) in probes.iter().enumerate() {
        for (j, &o) in offsets.iter().enumerate() {
            let ga = params.grid::<T>(o + ntau, nh)?;
            let gb = params.grid::<T>(o, nh)?;
            let a = probe_bundle(coeffs, x, &ga, params.n_paths, seed_for("periodic-later", i, j))?;
            let b = probe_bundle(coeffs, x, &gb, params.n_paths, seed_for("periodic-shifted", i, j))?;
            request_along_paths(&mut req, &a, o + ntau);
            request_along_paths(&mut req, &b, o + ntau);
            runs.push((i, j, a, b));
        }
    }
    let real = sample_increments(kernel, &base, &req, derive_seed(seed, "periodic-field", 0))?;
    let shifted = shift_realization(&real, T::lit(tau))?;

    let mut entries = Vec::new();
    for (i, j, a, b) in &runs {
        let ua = solve_truncated(driver, a, &real, &params.solver)?.y0();
        let ub = solve_truncated(driver, b, &shifted, &params.solver)?.y0();
        let disc = (ua.mean - ub.mean).abs();
        let se = (ua.stderr.powi(2) + ub.stderr.powi(2)).sqrt();
        let scale = ua.mean.abs().max(ub.mean.abs()).max(1.0);
        let truncation = (-margin * horizon).exp() * scale;
        let tolerance = 3.0 * se + ROUNDING_FLOOR * scale;
        entries.push(PeriodicityEntry {
            t: check_times[*j],
            probe: probes[*i].iter().map(|v| v.as_f64()).collect(),
            later: ua.mean,
            shifted: ub.mean,
            discrepancy: disc,
            combined_stderr: se,
            truncation,
            tolerance,
            pass: disc <= tolerance,
        });
    }
    let max_discrepancy = entries.iter().map(|e| e.discrepancy).fold(0.0, f64::max);
    let pass = entries.iter().all(|e| e.pass);
    Ok(PeriodicityReport { tau, horizon, margin, entries, max_discrepancy, pass })
}
