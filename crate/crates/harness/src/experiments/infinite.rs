use std::fmt::Write;

use bdsde::bdsde_solver::{Driver, TermKind, TimeShape};
use bdsde::horizon::{solve_horizon, stationary_solution, verify_periodicity, HorizonParams};
use serde::Serialize;

use super::Run;
use crate::error::HarnessError;

fn params(run: &Run, driver: &Driver) -> Result<HorizonParams, HarnessError> {
    let e = &run.cfg.experiment;
    let mut p = HorizonParams::new(driver, e.ladder.clone(), e.steps_per_unit, run.cfg.grid.paths)?;
    if let Some(k) = e.discount {
        p = p.with_discount(k);
    }
    if p.tau.is_none() {
        p.tau = e.period;
    }
    p.solver = e.solver();
    p.validate()?;
    Ok(p)
}

fn probes(run: &Run) -> Vec<Vec<f64>> {
    run.cfg.grid.probes.iter().map(|&x| vec![x]).collect()
}

/// Horizon ladder: differences of consecutive truncations must decrease.
pub fn cauchy(run: &mut Run) -> Result<(), HarnessError> {
    let cfg = run.cfg;
    let kernel = cfg.kernel()?;
    let driver = cfg.driver(&kernel)?;
    let coeffs = cfg.coefficients.build();
    let p = params(run, &driver)?;
    let xs = probes(run);
    let mut reports = Vec::new();
    let mut csv = String::from("realization,horizon,x,u0,u0_stderr\n");
    for r in 0..cfg.grid.realizations {
        let rep = solve_horizon(&driver, &coeffs, &kernel, &p, &xs, run.seed("horizon", r as u64))?;
        for level in &rep.levels {
            for (x, u) in cfg.grid.probes.iter().zip(&level.u0) {
                writeln!(csv, "{r},{},{x:e},{:e},{:e}", level.horizon, u.mean, u.stderr).unwrap();
            }
        }
        let c = &rep.cauchy;
        run.flag(
            &format!("cauchy_monotone/r{r}"),
            c.violations as f64,
            0.0,
            c.monotone,
            "increases among consecutive horizon differences",
        );
        if let Some(target) = cfg.experiment.expected {
            let last = rep.levels.last().expect("non-empty ladder");
            let worst = last.u0.iter().map(|u| (u.mean - target).abs()).fold(0.0, f64::max);
            run.at_most(&format!("longest_horizon_error/r{r}"), worst, cfg.tolerances.abs);
        }
        reports.push(rep);
    }
    run.write("ladder.csv", csv.as_bytes())?;
    run.report(&reports)
}

/// `a (mu sin(wt + phi) + w cos(wt + phi)) / (mu^2 + w^2)`: the bounded
/// solution of `y' = mu y - a sin(wt + phi)` when `f = -mu y + a sin(wt + phi)`
/// and `g = 0`.
fn forced_closed_form(driver: &Driver, t: f64) -> Option<f64> {
    if !driver.g.is_zero() {
        return None;
    }
    let mut mu = 0.0;
    let mut forcing = None;
    for term in &driver.f.terms {
        match (term.kind, term.time) {
            (TermKind::Y, TimeShape::One) => mu -= term.coeff,
            (TermKind::Const, TimeShape::Sin { period, phase }) if forcing.is_none() => {
                forcing = Some((term.coeff, period, phase))
            }
            _ => return None,
        }
    }
    let (a, period, phase) = forcing?;
    let w = std::f64::consts::TAU / period;
    let arg = w * t + phase;
    Some(a * (mu * arg.sin() + w * arg.cos()) / (mu * mu + w * w))
}

#[derive(Serialize)]
struct ClosedFormRow {
    t: f64,
    x: f64,
    later: f64,
    exact: f64,
    error: f64,
}

pub fn periodic(run: &mut Run) -> Result<(), HarnessError> {
    let cfg = run.cfg;
    let kernel = cfg.kernel()?;
    let driver = cfg.driver(&kernel)?;
    let coeffs = cfg.coefficients.build();
    let p = params(run, &driver)?;
    let xs = probes(run);
    let mut reports = Vec::new();
    let mut exact_rows = Vec::new();
    let mut csv = String::from("realization,t,x,later,shifted,discrepancy,tolerance,pass\n");
    let quiet = driver.g.is_zero();
    for r in 0..cfg.grid.realizations {
        let rep =
            verify_periodicity(&driver, &coeffs, &kernel, &p, &xs, &cfg.experiment.check_times, run.seed("periodic", r as u64))?;
        for e in &rep.entries {
            writeln!(
                csv,
                "{r},{},{:e},{:e},{:e},{:e},{:e},{}",
                e.t, e.probe[0], e.later, e.shifted, e.discrepancy, e.tolerance, e.pass
            )
            .unwrap();
        }
        let (disc, tol) = rep
            .entries
            .iter()
            .map(|e| (e.discrepancy, e.tolerance))
            .max_by(|x, y| (x.0 / x.1).total_cmp(&(y.0 / y.1)))
            .unwrap_or((0.0, 0.0));
        run.flag(&format!("periodicity/r{r}"), disc, tol, rep.pass, "worst entry against its own tolerance");
        if quiet {
            run.at_most(&format!("max_discrepancy/r{r}"), rep.max_discrepancy, 1e-2);
            for e in &rep.entries {
                if let Some(exact) = forced_closed_form(&driver, e.t + rep.tau) {
                    let error = (e.later - exact).abs();
                    exact_rows.push(ClosedFormRow { t: e.t + rep.tau, x: e.probe[0], later: e.later, exact, error });
                }
            }
        }
        reports.push(rep);
    }
    if !exact_rows.is_empty() {
        let worst = exact_rows.iter().map(|e| e.error).fold(0.0, f64::max);
        run.at_most("closed_form_error", worst, 1e-2);
    }
    run.write("periodicity.csv", csv.as_bytes())?;
    run.report(&serde_json::json!({ "reports": reports, "closed_form": exact_rows }))
}

pub fn stationary(run: &mut Run) -> Result<(), HarnessError> {
    let cfg = run.cfg;
    let kernel = cfg.kernel()?;
    let driver = cfg.driver(&kernel)?;
    let coeffs = cfg.coefficients.build();
    let p = params(run, &driver)?;
    let xs = probes(run);
    let mut reports = Vec::new();
    let mut csv = String::from("realization,r,x,shifted,later,discrepancy,combined_stderr,pass\n");
    for r in 0..cfg.grid.realizations {
        let rep =
            stationary_solution(&driver, &coeffs, &kernel, &p, &xs, &cfg.experiment.shifts, run.seed("stationary", r as u64))?;
        for s in &rep.shifts {
            writeln!(
                csv,
                "{r},{},{:e},{:e},{:e},{:e},{:e},{}",
                s.r, s.probe[0], s.shifted, s.later, s.discrepancy, s.combined_stderr, s.pass
            )
            .unwrap();
            run.flag(
                &format!("shift_identity/r{r}/shift{}/x{}", s.r, s.probe[0]),
                s.discrepancy,
                3.0 * s.combined_stderr,
                s.pass,
                "within combined standard errors",
            );
        }
        // Worst probe relative to its own bound.
        let (gap, bound) = rep
            .v_t
            .iter()
            .zip(&rep.v_2t)
            .zip(&rep.horizon_bounds)
            .map(|((a, b), bound)| ((a - b).abs(), *bound))
            .max_by(|x, y| (x.0 / x.1).total_cmp(&(y.0 / y.1)))
            .unwrap_or((0.0, 0.0));
        run.flag(&format!("horizon_independence/r{r}"), gap, bound, rep.horizon_pass, "v(0, x) at T and 2T");
        run.flag(
            &format!("past_measurable/r{r}"),
            f64::from(u8::from(!rep.past_measurable)),
            0.0,
            rep.past_measurable,
            "v(0, .) changed after redrawing later increments",
        );
        reports.push(rep);
    }
    run.write("stationary.csv", csv.as_bytes())?;
    run.report(&reports)
}
