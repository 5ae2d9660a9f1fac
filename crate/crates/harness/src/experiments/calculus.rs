use std::fmt::Write;

use bdsde::kunita_calculus::{
    ito_residual as residuals, quadratic_variation, qv_quadrature, sample_integrand, ProcessSpec, ProcessTerm,
    TestFunction,
};
use bdsde::noise_field::KernelFamily;
use bdsde::stats::Estimate;
use serde::Serialize;

use super::{bundle, field, Run, Start};
use crate::error::HarnessError;

#[derive(Serialize)]
struct QvReport {
    realizations: usize,
    paths: usize,
    steps: usize,
    realized: Estimate,
    quadrature: Estimate,
    ratio: f64,
    ratio_stderr: f64,
}

/// Realized bracket of `int <-B(dr, X_r)` against the quadrature of
/// `int q(r, X_r, X_r) dr`, pooled over realizations.
pub fn qv_check(run: &mut Run) -> Result<(), HarnessError> {
    let cfg = run.cfg;
    let g = &cfg.grid;
    let kernel = cfg.kernel()?;
    let coeffs = cfg.coefficients.build();
    let grid = g.time_grid()?;
    let mut csv = String::from("realization,realized,quadrature\n");
    let (mut realized, mut quad, mut ratios) = (Vec::new(), Vec::new(), Vec::new());
    for r in 0..g.realizations {
        let b = bundle(&coeffs, Start::Point(g.probes[0]), &grid, g.paths, run.seed("paths", r as u64), false)?;
        let real = field(&kernel, &grid, &[&b], &[], run.seed("field", r as u64))?;
        let ones = sample_integrand(&b, |_, _| 1.0);
        let qv = quadratic_variation(&ones, &real, &b)?;
        let target = qv_quadrature(&ones, &kernel, &b)?;
        let (a, t) = (Estimate::from_samples(&qv).mean, Estimate::from_samples(&target).mean);
        writeln!(csv, "{r},{a:e},{t:e}").unwrap();
        realized.push(a);
        quad.push(t);
        ratios.push(a / t);
    }
    run.write("qv.csv", csv.as_bytes())?;
    let (re, qe) = (Estimate::from_samples(&realized), Estimate::from_samples(&quad));
    let ratio = re.mean / qe.mean;
    run.at_most("qv_relative_error", (ratio - 1.0).abs(), cfg.tolerances.qv_rel);
    run.report(&QvReport {
        realizations: g.realizations,
        paths: g.paths,
        steps: g.steps,
        realized: re,
        quadrature: qe,
        ratio,
        ratio_stderr: Estimate::from_samples(&ratios).stderr,
    })
}

#[derive(Serialize)]
struct ItoReport {
    test_function: TestFunction,
    process: ProcessSpec,
    /// Residual means across realizations, each a mean over its paths.
    full: Estimate,
    without_field_bracket: Estimate,
    without_brownian_bracket: Estimate,
    expected_without_field_bracket: Option<f64>,
    expected_without_brownian_bracket: Option<f64>,
}

/// Ito residuals with and without each bracket term. Paths sharing a field
/// sample are correlated, so standard errors are taken across realizations.
pub fn ito_residual(run: &mut Run) -> Result<(), HarnessError> {
    let cfg = run.cfg;
    let g = &cfg.grid;
    let e = &cfg.experiment;
    let kernel = cfg.kernel()?;
    let coeffs = cfg.coefficients.build();
    let grid = g.time_grid()?;
    let phi = TestFunction::parse(&e.test_function)?;
    let [s0, f, gc, h] = e.process;
    let spec = ProcessSpec {
        s0,
        f: ProcessTerm::Constant { value: f },
        g: ProcessTerm::Constant { value: gc },
        h: ProcessTerm::Constant { value: h },
    };
    let mut means = [Vec::new(), Vec::new(), Vec::new()];
    let mut csv = String::from("realization,full,without_field_bracket,without_brownian_bracket\n");
    for r in 0..g.realizations {
        let b = bundle(&coeffs, Start::Point(g.probes[0]), &grid, g.paths, run.seed("paths", r as u64), false)?;
        let real = field(&kernel, &grid, &[&b], &[], run.seed("field", r as u64))?;
        let res = residuals(&spec, phi, &real, &b)?;
        let row: Vec<f64> = [&res.full, &res.without_g, &res.without_h]
            .iter()
            .map(|v| v.iter().sum::<f64>() / v.len() as f64)
            .collect();
        writeln!(csv, "{r},{:e},{:e},{:e}", row[0], row[1], row[2]).unwrap();
        for (m, v) in means.iter_mut().zip(row) {
            m.push(v);
        }
    }
    run.write("ito.csv", csv.as_bytes())?;
    let [full, wg, wh] = means.map(|m| Estimate::from_samples(&m));
    // Closed-form bracket sizes for phi = s^2 with constant coefficients and
    // a kernel whose diagonal is constant.
    let q_diag = match &cfg.kernel {
        KernelFamily::Constant { q0 } => Some(*q0),
        KernelFamily::Exponential { amplitude, .. } | KernelFamily::SquaredExponential { amplitude, .. } => {
            Some(*amplitude)
        }
        _ => None,
    };
    let t = g.horizon;
    let square = phi == TestFunction::Square;
    let exp_g = q_diag.filter(|_| square).map(|q| -gc * gc * q * t);
    let exp_h = square.then_some(h * h * t);
    let k = cfg.tolerances.n_se;
    run.at_most("full_residual_bias", full.mean.abs(), k * full.stderr);
    if let Some(v) = exp_g {
        run.at_most("field_bracket_bias", (wg.mean - v).abs(), k * wg.stderr);
    }
    if let Some(v) = exp_h.filter(|_| h != 0.0) {
        run.at_most("brownian_bracket_bias", (wh.mean - v).abs(), k * wh.stderr);
    }
    run.report(&ItoReport {
        test_function: phi,
        process: spec,
        full,
        without_field_bracket: wg,
        without_brownian_bracket: wh,
        expected_without_field_bracket: exp_g,
        expected_without_brownian_bracket: exp_h,
    })
}
