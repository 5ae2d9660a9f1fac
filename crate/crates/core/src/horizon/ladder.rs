use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_probes, probe_bundle, solve_truncated, HorizonParams};
use crate::bdsde_solver::Driver;
use crate::error::Result;
use crate::forward_sde::SdeCoefficients;
use crate::kunita_calculus::request_along_paths;
use crate::noise_field::{sample_increments, CovarianceKernel, PointRequest};
use crate::rng::derive_seed;
use crate::scalar::Real;
use crate::stats::Estimate;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonLevel {
    pub horizon: f64,
    /// `u(0, x)` per probe.
    pub u0: Vec<Estimate>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CauchyReport {
    /// `sup_t e^{-K't} E|Y^{(j+1)}_t - Y^{(j)}_t|^2`, maximized over probes.
    pub differences: Vec<f64>,
    /// `e^{-K' n_j} E|Y_{n_j}|^2` from the longest horizon, maximized over probes.
    pub tails: Vec<f64>,
    /// Number of increases in `differences`.
    pub violations: usize,
    pub monotone: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonReport {
    pub params: HorizonParams,
    pub margin: f64,
    pub levels: Vec<HorizonLevel>,
    pub cauchy: CauchyReport,
}

/// Solves the zero-terminal problem on each horizon of the ladder with one
/// field realization and one set of forward paths per probe, so that
/// consecutive horizons share every draw on their common steps.
pub fn solve_horizon<T: Real>(
    driver: &Driver,
    coeffs: &SdeCoefficients<T>,
    kernel: &CovarianceKernel<T>,
    params: &HorizonParams,
    probes: &[Vec<T>],
    seed: u64,
) -> Result<HorizonReport> {
    params.validate()?;
    let margin = params.require_margin(driver, kernel)?;
    check_probes(probes, coeffs.dim)?;
    let steps: Vec<usize> = params.ladder.iter().map(|&n| params.steps_for(n)).collect::<Result<_>>()?;
    let longest = *steps.last().unwrap();
    let grids = steps.iter().map(|&n| params.grid::<T>(0, n)).collect::<Result<Vec<_>>>()?;
    let path_seed = |i: usize| derive_seed(seed, "horizon-paths", i as u64);

    let mut req = PointRequest::new(coeffs.dim, longest);
    for (i, x) in probes.iter().enumerate() {
        let b = probe_bundle(coeffs, x, &grids[grids.len() - 1], params.n_paths, path_seed(i))?;
        request_along_paths(&mut req, &b, 0);
    }
    let real = sample_increments(kernel, &grids[grids.len() - 1], &req, derive_seed(seed, "horizon-field", 0))?;

    // solutions[i][j]: probe i, horizon j
    let solutions = probes
        .iter()
        .enumerate()
        .map(|(i, x)| {
            grids
                .par_iter()
                .map(|g| {
                    let b = probe_bundle(coeffs, x, g, params.n_paths, path_seed(i))?;
                    solve_truncated(driver, &b, &real, &params.solver)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let levels = params
        .ladder
        .iter()
        .enumerate()
        .map(|(j, &n)| HorizonLevel { horizon: n, u0: solutions.iter().map(|s| s[j].y0()).collect() })
        .collect();

    let kd = params.discount;
    let m = params.n_paths as f64;
    let mut differences = Vec::new();
    for j in 0..steps.len().saturating_sub(1) {
        let mut worst = 0.0f64;
        for s in &solutions {
            for k in 0..=steps[j] {
                let (a, b) = (s[j].y_at(k), s[j + 1].y_at(k));
                let ms: f64 = a.iter().zip(b).map(|(u, v)| (*u - *v).as_f64().powi(2)).sum::<f64>() / m;
                let t = grids[j].time(k).as_f64();
                worst = worst.max((-kd * t).exp() * ms);
            }
        }
        differences.push(worst);
    }
    let tails = steps
        .iter()
        .zip(&params.ladder)
        .map(|(&k, &n)| {
            solutions
                .iter()
                .map(|s| {
                    let y = s[s.len() - 1].y_at(k);
                    (-kd * n).exp() * y.iter().map(|v| v.as_f64().powi(2)).sum::<f64>() / m
                })
                .fold(0.0, f64::max)
        })
        .collect();
    let violations = differences.windows(2).filter(|w| w[1] > w[0]).count();
    Ok(HorizonReport {
        params: params.clone(),
        margin,
        levels,
        cauchy: CauchyReport { differences, tails, violations, monotone: violations <= 1 },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bdsde_solver::parse_terms;

    #[test]
    fn contraction_to_constant() {
        let k = CovarianceKernel::constant(0.1).unwrap();
        let d = Driver::for_kernel(parse_terms("-1*y + 0.7").unwrap(), parse_terms("0").unwrap(), &k).unwrap();
        let p = HorizonParams::new(&d, vec![2.0, 4.0, 6.0, 8.0], 32, 64).unwrap();
        let coeffs = SdeCoefficients::<f64>::brownian(1);
        let r = solve_horizon(&d, &coeffs, &k, &p, &[vec![0.0], vec![1.0]], 3).unwrap();
        let last = &r.levels[3];
        for e in &last.u0 {
            assert!((e.mean - 0.7).abs() <= 1e-3, "{e:?}");
        }
        assert!(r.cauchy.differences.windows(2).all(|w| w[1] < w[0]), "{:?}", r.cauchy);
        assert!(r.cauchy.tails.windows(2).all(|w| w[1] < w[0]));
    }
}
