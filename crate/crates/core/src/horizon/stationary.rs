use serde::{Deserialize, Serialize};

use super::{check_probes, declare_mapped, probe_bundle, shift_realization, solve_truncated, HorizonParams, ROUNDING_FLOOR};
use crate::bdsde_solver::{BackwardSolution, Driver};
use crate::error::{Error, Result};
use crate::forward_sde::{PathBundle, SdeCoefficients};
use crate::noise_field::{sample_increments, CovarianceKernel, FieldRealization, PointRequest};
use crate::rng::derive_seed;
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftEntry {
    pub r: f64,
    pub probe: Vec<f64>,
    /// `v(0, x)` computed from the shifted two-sided noise.
    pub shifted: f64,
    /// `v(r, x)` computed from the original noise.
    pub later: f64,
    pub discrepancy: f64,
    pub combined_stderr: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StationaryReport {
    /// Truncation length `T`; the recomputation uses `2T`.
    pub horizon: f64,
    pub margin: f64,
    pub shifts: Vec<ShiftEntry>,
    /// `v(0, x)` per probe at `T` and `2T`.
    pub v_t: Vec<f64>,
    pub v_2t: Vec<f64>,
    /// `e^{-mu T} sqrt(E|Y_T|^2)` from the `2T` run plus three standard errors.
    pub horizon_bounds: Vec<f64>,
    pub horizon_pass: bool,
    /// `v(0, .)` bit-identical after redrawing every increment after time 0.
    pub past_measurable: bool,
    pub pass: bool,
}

/// Builds `v(t, x) = Y_{T-t}^{T-t,x}` driven by the reversed two-sided field
/// `s -> B(t - s) - B(t)` and checks the shift identity, the independence
/// from `T`, and that `v(t, .)` only sees noise up to time `t`.
pub fn stationary_solution<T: Real>(
    driver: &Driver,
    coeffs: &SdeCoefficients<T>,
    kernel: &CovarianceKernel<T>,
    params: &HorizonParams,
    probes: &[Vec<T>],
    shifts: &[f64],
    seed: u64,
) -> Result<StationaryReport> {
    params.validate()?;
    if !driver.is_time_independent() || kernel.is_time_dependent() {
        return Err(Error::Precondition("stationary solutions need time-independent coefficients".into()));
    }
    let margin = params.require_margin(driver, kernel)?;
    check_probes(probes, coeffs.dim)?;
    let horizon = *params.ladder.last().unwrap();
    let nt = params.steps_for(horizon)?;
    let rs: Vec<usize> = shifts.iter().map(|&r| params.steps_for(r)).collect::<Result<_>>()?;
    // Two-sided noise on [-2T, r_max]; time zero sits at index `origin`.
    let origin = 2 * nt;
    let total = origin + rs.iter().copied().max().unwrap_or(0);
    let base_grid = params.grid::<T>(0, total)?;
    let g_t = params.grid::<T>(0, nt)?;
    let g_2t = params.grid::<T>(0, 2 * nt)?;

    let seed_of = |tag: &str, i: usize, j: usize| derive_seed(seed, tag, (i * (shifts.len() + 1) + j) as u64);
    let mut req = PointRequest::new(coeffs.dim, total);
    let mut runs = Vec::new();
    for (i, x) in probes.iter().enumerate() {
        let short = probe_bundle(coeffs, x, &g_t, params.n_paths, seed_of("stationary-base", i, 0))?;
        let long = probe_bundle(coeffs, x, &g_2t, params.n_paths, seed_of("stationary-base", i, 0))?;
        declare_mapped(&mut req, &long, |k| origin - 1 - k);
        let mut pairs = Vec::new();
        for (j, &r) in rs.iter().enumerate() {
            let a = probe_bundle(coeffs, x, &g_t, params.n_paths, seed_of("stationary-shifted", i, j))?;
            let b = probe_bundle(coeffs, x, &g_t, params.n_paths, seed_of("stationary-later", i, j))?;
            declare_mapped(&mut req, &a, |k| origin + r - 1 - k);
            declare_mapped(&mut req, &b, |k| origin + r - 1 - k);
            pairs.push((a, b));
        }
        runs.push((short, long, pairs));
    }
    let base = sample_increments(kernel, &base_grid, &req, derive_seed(seed, "stationary-field", 0))?;

    // v_H(t) from two-sided noise `field`, index `at` standing for time t.
    let value = |field: &FieldRealization<T>, at: usize, steps: usize, b: &PathBundle<T>| -> Result<BackwardSolution<T>> {
        let reversed = field.reversed(at - steps, at)?;
        solve_truncated(driver, b, &reversed, &params.solver)
    };

    let mut out = Vec::new();
    let (mut v_t, mut v_2t, mut bounds) = (Vec::new(), Vec::new(), Vec::new());
    let mut horizon_pass = true;
    let mut past_measurable = true;
    let future = base.resample_steps(origin..total.max(origin), derive_seed(seed, "stationary-future", 0))?;
    for (i, (short, long, pairs)) in runs.iter().enumerate() {
        let probe: Vec<f64> = probes[i].iter().map(|v| v.as_f64()).collect();
        for (j, (a, b)) in pairs.iter().enumerate() {
            let shifted = shift_realization(&base, T::lit(shifts[j]))?;
            let ua = value(&shifted, origin, nt, a)?.y0();
            let ub = value(&base, origin + rs[j], nt, b)?.y0();
            let disc = (ua.mean - ub.mean).abs();
            let se = (ua.stderr.powi(2) + ub.stderr.powi(2)).sqrt();
            let scale = ua.mean.abs().max(ub.mean.abs()).max(1.0);
            out.push(ShiftEntry {
                r: shifts[j],
                probe: probe.clone(),
                shifted: ua.mean,
                later: ub.mean,
                discrepancy: disc,
                combined_stderr: se,
                pass: disc <= 3.0 * se + ROUNDING_FLOOR * scale,
            });
        }
        let s1 = value(&base, origin, nt, short)?;
        let s2 = value(&base, origin, 2 * nt, long)?;
        let (e1, e2) = (s1.y0(), s2.y0());
        let tail = s2.y_at(nt);
        let rms = (tail.iter().map(|v| v.as_f64().powi(2)).sum::<f64>() / tail.len() as f64).sqrt();
        let bound = (-params.mu * horizon).exp() * rms
            + 3.0 * (e1.stderr.powi(2) + e2.stderr.powi(2)).sqrt()
            + ROUNDING_FLOOR * e1.mean.abs().max(1.0);
        horizon_pass &= (e1.mean - e2.mean).abs() <= bound;
        v_t.push(e1.mean);
        v_2t.push(e2.mean);
        bounds.push(bound);
        if total > origin {
            let again = value(&future, origin, nt, short)?;
            past_measurable &= again.y_at(0) == s1.y_at(0);
        }
    }
    let pass = horizon_pass && past_measurable && out.iter().all(|e| e.pass);
    Ok(StationaryReport {
        horizon,
        margin,
        shifts: out,
        v_t,
        v_2t,
        horizon_bounds: bounds,
        horizon_pass,
        past_measurable,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bdsde_solver::parse_terms;

    #[test]
    fn constant_fixed_point_is_stationary() {
        let k = CovarianceKernel::constant(0.1).unwrap();
        let d = Driver::for_kernel(parse_terms("-1*y + 0.5").unwrap(), parse_terms("0").unwrap(), &k).unwrap();
        let p = HorizonParams::new(&d, vec![8.0], 16, 16).unwrap();
        let r = stationary_solution(&d, &SdeCoefficients::<f64>::brownian(1), &k, &p, &[vec![0.0]], &[0.5, 1.0, 2.0], 2)
            .unwrap();
        assert!(r.pass, "{r:?}");
        assert!(r.shifts.iter().all(|e| e.discrepancy <= 1e-3 && (e.later - 0.5).abs() <= 1e-3));
    }

    #[test]
    fn time_dependent_driver_is_rejected() {
        let k = CovarianceKernel::constant(0.1).unwrap();
        let f = crate::bdsde_solver::DriverFn::new(vec![
            crate::bdsde_solver::DriverTerm::new(-1.0, crate::bdsde_solver::TermKind::Y),
            crate::bdsde_solver::DriverTerm::timed(
                1.0,
                crate::bdsde_solver::TimeShape::Cos { period: 1.0, phase: 0.0 },
                crate::bdsde_solver::TermKind::Const,
            ),
        ]);
        let d = Driver::for_kernel(f, parse_terms("0").unwrap(), &k).unwrap();
        let p = HorizonParams::new(&d, vec![2.0], 8, 4).unwrap();
        let r = stationary_solution(&d, &SdeCoefficients::<f64>::brownian(1), &k, &p, &[vec![0.0]], &[0.5], 1);
        assert!(matches!(r, Err(Error::Precondition(_))));
    }
}
