//! Infinite-horizon equations by truncation on growing horizons, the noise
//! shift, and the random periodic and stationary solutions built from them.

mod ladder;
mod periodic;
mod stationary;

pub use ladder::{solve_horizon, CauchyReport, HorizonLevel, HorizonReport};
pub use periodic::{verify_periodicity, PeriodicityEntry, PeriodicityReport};
pub use stationary::{stationary_solution, ShiftEntry, StationaryReport};

use serde::{Deserialize, Serialize};

use crate::bdsde_solver::{BackwardSolution, Driver, SolverConfig, TerminalCondition};
use crate::error::{invalid, Error, Result};
use crate::forward_sde::{simulate, InitialState, PathBundle, SdeCoefficients};
use crate::grid::TimeGrid;
use crate::noise_field::{CovarianceKernel, FieldRealization};
use crate::scalar::Real;

/// Discrepancies below this multiple of the solution scale are rounding.
pub(crate) const ROUNDING_FLOOR: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonParams {
    /// Exponential discount `K'` applied to the horizon differences.
    pub discount: f64,
    /// Monotonicity constant of the driver.
    pub mu: f64,
    pub tau: Option<f64>,
    /// Strictly increasing truncation horizons.
    pub ladder: Vec<f64>,
    pub steps_per_unit: usize,
    pub n_paths: usize,
    #[serde(default)]
    pub solver: SolverConfig,
}

impl HorizonParams {
    /// Takes `mu` and `tau` from the driver and sets `K' = mu / 2`.
    pub fn new(driver: &Driver, ladder: Vec<f64>, steps_per_unit: usize, n_paths: usize) -> Result<Self> {
        let mu = driver
            .mu
            .ok_or_else(|| Error::Precondition("driver is not strictly decreasing in y".into()))?;
        let p = Self { discount: 0.5 * mu, mu, tau: driver.tau, ladder, steps_per_unit, n_paths, solver: SolverConfig::default() };
        p.validate()?;
        Ok(p)
    }

    pub fn with_discount(mut self, discount: f64) -> Self {
        self.discount = discount;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.discount > 0.0) {
            return Err(invalid("discount must be positive"));
        }
        if self.steps_per_unit == 0 || self.n_paths < 2 {
            return Err(invalid("need a positive grid density and at least two paths"));
        }
        if self.ladder.is_empty() || self.ladder.windows(2).any(|w| w[1] <= w[0]) || self.ladder[0] <= 0.0 {
            return Err(invalid("horizon ladder must be positive and strictly increasing"));
        }
        for &n in &self.ladder {
            self.steps_for(n)?;
        }
        if let Some(tau) = self.tau {
            if tau < 0.0 {
                return Err(invalid("period must be non-negative"));
            }
        }
        Ok(())
    }

    /// `2 mu - K' - K/(1-alpha) - K M` for this driver and kernel.
    pub fn margin<T: Real>(&self, driver: &Driver, kernel: &CovarianceKernel<T>) -> f64 {
        let m = kernel.bound_m.map_or(f64::INFINITY, |m| m.as_f64());
        driver.monotonicity_margin(self.discount, m)
    }

    /// The margin, or a precondition error when it is not positive.
    pub fn require_margin<T: Real>(&self, driver: &Driver, kernel: &CovarianceKernel<T>) -> Result<f64> {
        let margin = self.margin(driver, kernel);
        if margin > 0.0 {
            Ok(margin)
        } else {
            Err(Error::Precondition(format!(
                "monotonicity condition 2mu - K' - K/(1-alpha) - K M > 0 fails (value {margin:.4}, discount {})",
                self.discount
            )))
        }
    }

    /// Number of grid steps covering `span`, which must sit on the lattice.
    pub fn steps_for(&self, span: f64) -> Result<usize> {
        let s = span * self.steps_per_unit as f64;
        let n = s.round();
        if (s - n).abs() > 1e-9 * s.abs().max(1.0) || n < 0.0 {
            return Err(invalid(format!("time {span} is not a multiple of the step 1/{}", self.steps_per_unit)));
        }
        Ok(n as usize)
    }

    pub(crate) fn step<T: Real>(&self) -> T {
        T::one() / T::from_usize_lossy(self.steps_per_unit)
    }

    /// Lattice grid `(first + j) h` for `j = 0..=steps`.
    pub(crate) fn grid<T: Real>(&self, first: usize, steps: usize) -> Result<TimeGrid<T>> {
        let h = self.step::<T>();
        TimeGrid::new((0..=steps).map(|j| T::from_usize_lossy(first + j) * h).collect())
    }
}

/// Noise shift by `r`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftOp {
    pub r: f64,
}

impl ShiftOp {
    pub fn apply<T: Real>(&self, real: &FieldRealization<T>) -> Result<FieldRealization<T>> {
        shift_realization(real, T::lit(self.r))
    }
}

/// Realization of `s -> B(s + r, .) - B(r, .)`: the first `r / dt` steps are
/// dropped and the grid re-anchored at zero. Point sets move with their steps.
pub fn shift_realization<T: Real>(real: &FieldRealization<T>, r: T) -> Result<FieldRealization<T>> {
    if !(r >= T::zero()) {
        return Err(invalid("shift must be non-negative"));
    }
    let from = real
        .grid()
        .index_of(real.grid().start() + r)
        .ok_or_else(|| invalid(format!("shift {} is not on the time grid", r.as_f64())))?;
    real.reindexed(from)
}

/// Declares the points of `bundle` step `k + 1` at realization step `map(k)`.
pub(crate) fn declare_mapped<T: Real>(
    req: &mut crate::noise_field::PointRequest<T>,
    bundle: &PathBundle<T>,
    map: impl Fn(usize) -> usize,
) {
    for k in 0..bundle.grid().steps() {
        req.declare_flat(map(k), bundle.states_at(k + 1));
    }
}

pub(crate) fn probe_bundle<T: Real>(
    coeffs: &SdeCoefficients<T>,
    x: &[T],
    grid: &TimeGrid<T>,
    n_paths: usize,
    seed: u64,
) -> Result<PathBundle<T>> {
    simulate(coeffs, InitialState::point(x.to_vec()), grid, n_paths, seed, false)
}

pub(crate) fn solve_truncated<T: Real>(
    driver: &Driver,
    bundle: &PathBundle<T>,
    real: &FieldRealization<T>,
    cfg: &SolverConfig,
) -> Result<BackwardSolution<T>> {
    crate::bdsde_solver::solve(driver, &TerminalCondition::Zero, bundle, real, cfg)
}

pub(crate) fn check_probes<T: Real>(probes: &[Vec<T>], dim: usize) -> Result<()> {
    if probes.is_empty() || probes.iter().any(|p| p.len() != dim) {
        return Err(invalid(format!("need at least one probe point of dimension {dim}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bdsde_solver::parse_terms;
    use crate::noise_field::{sample_increments, PointRequest};

    fn field(steps: usize) -> FieldRealization<f64> {
        let grid = TimeGrid::uniform(0.0, steps as f64 / 8.0, steps).unwrap();
        let mut req = PointRequest::new(1, steps);
        req.declare_everywhere(&[-0.5, 0.0, 0.7]);
        sample_increments(&CovarianceKernel::exponential(1.0, 0.5).unwrap(), &grid, &req, 4).unwrap()
    }

    #[test]
    fn zero_shift_is_identity() {
        let r = field(16);
        assert_eq!(shift_realization(&r, 0.0).unwrap(), r);
    }

    #[test]
    fn shifts_compose_exactly() {
        let r = field(40);
        let a = shift_realization(&shift_realization(&r, 0.375).unwrap(), 1.25).unwrap();
        let b = shift_realization(&r, 1.625).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_bytes().unwrap(), b.to_bytes().unwrap());
    }

    #[test]
    fn shifted_increments_are_later_increments() {
        let r = field(24);
        let s = shift_realization(&r, 1.0).unwrap();
        assert_eq!(s.n_steps(), 16);
        for k in 0..16 {
            for x in [-0.5, 0.0, 0.7] {
                assert_eq!(s.evaluate_increment(k, &[x]).unwrap(), r.evaluate_increment(k + 8, &[x]).unwrap());
            }
        }
        assert!(s.grid().start() == 0.0 && (s.grid().end() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn off_grid_shift_is_rejected() {
        assert!(matches!(shift_realization(&field(16), 0.3), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn margin_gate() {
        let k = CovarianceKernel::constant(0.1).unwrap();
        let good = Driver::for_kernel(parse_terms("-1*y + 1").unwrap(), parse_terms("0").unwrap(), &k).unwrap();
        let p = HorizonParams::new(&good, vec![2.0, 4.0], 8, 10).unwrap();
        assert!((p.require_margin(&good, &k).unwrap() - (2.0 - 0.5 - 1.0 - 0.1)).abs() < 1e-12);
        let bad = Driver::for_kernel(parse_terms("-1*y + 1*sin_y").unwrap(), parse_terms("0").unwrap(), &k).unwrap();
        let p = HorizonParams::new(&bad, vec![2.0], 8, 10);
        match p {
            Ok(p) => assert!(matches!(p.require_margin(&bad, &k), Err(Error::Precondition(_)))),
            Err(e) => assert!(matches!(e, Error::Precondition(_))),
        }
    }
}
