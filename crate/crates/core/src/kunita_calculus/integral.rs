use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::forward_sde::PathBundle;
use crate::noise_field::{CovarianceKernel, FieldRealization, PointRequest};
use crate::scalar::Real;

/// How the `g`-term of a backward equation is integrated over one step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseIntegrator {
    /// `g * dB`.
    Euler,
    /// Exact for `g` affine in `y`: `g * (exp(G dB - G^2 dQ / 2) - 1) / G`
    /// with `G = dg/dy`. Reduces to `Euler` when `G = 0`.
    #[default]
    Exponential,
}

impl NoiseIntegrator {
    /// Increment contributed by `g` over a step with field increment `db`
    /// of conditional variance `dq`; `gy` is `dg/dy` at the same arguments.
    #[inline]
    pub fn step<T: Real>(self, g: T, gy: T, db: T, dq: T) -> T {
        match self {
            Self::Euler => g * db,
            Self::Exponential => {
                if gy == T::zero() {
                    g * db
                } else {
                    let u = gy * db - T::lit(0.5) * gy * gy * dq;
                    g * u.min(T::exp_cap()).exp_m1() / gy
                }
            }
        }
    }
}

/// Offset of the bundle grid inside the realization grid.
pub(crate) fn align<T: Real>(real: &FieldRealization<T>, bundle: &PathBundle<T>) -> Result<usize> {
    if real.dim() != bundle.dim() {
        return Err(invalid("realization and bundle dimensions differ"));
    }
    real.grid()
        .alignment_of(bundle.grid())
        .ok_or_else(|| invalid("bundle grid is not a sub-grid of the realization grid"))
}

/// Declares `X_{k+1}` of every path at step `offset + k`.
pub fn request_along_paths<T: Real>(req: &mut PointRequest<T>, bundle: &PathBundle<T>, offset: usize) {
    for k in 0..bundle.grid().steps() {
        req.declare_flat(offset + k, bundle.states_at(k + 1));
    }
}

/// `Delta B_k(X_{k+1})` for every step and path, step-major (`N*M`).
pub fn increments_along<T: Real>(real: &FieldRealization<T>, bundle: &PathBundle<T>) -> Result<Vec<T>> {
    let o = align(real, bundle)?;
    let n = bundle.grid().steps();
    let m = bundle.n_paths();
    let d = bundle.dim();
    let rows: Vec<Vec<T>> = (0..n)
        .into_par_iter()
        .map(|k| {
            let xs = bundle.states_at(k + 1);
            if d == 1 {
                return real.evaluate_increments(o + k, xs);
            }
            (0..m).map(|p| real.evaluate_increment(o + k, &xs[p * d..(p + 1) * d])).collect::<Result<Vec<T>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(rows.concat())
}

#[derive(Clone, Debug, PartialEq)]
pub struct BackwardIntegralResult<T> {
    /// Per-path `sum_k f_{k+1} Delta B_k(X_{k+1})`.
    pub values: Vec<T>,
    /// Per-path `sum_k (f_{k+1} Delta B_k(X_{k+1}))^2`.
    pub quadratic_variation: Vec<T>,
    pub steps: usize,
}

fn check_integrand<T: Real>(integrand: &[T], bundle: &PathBundle<T>) -> Result<()> {
    if integrand.len() != (bundle.grid().steps() + 1) * bundle.n_paths() {
        return Err(invalid("integrand must hold (N+1)*M samples, step-major"));
    }
    Ok(())
}

/// Backward Ito-Kunita integral over the bundle grid, evaluated with the
/// integrand and the field at the right endpoint of each step.
pub fn backward_integral<T: Real>(
    integrand: &[T],
    real: &FieldRealization<T>,
    bundle: &PathBundle<T>,
) -> Result<BackwardIntegralResult<T>> {
    check_integrand(integrand, bundle)?;
    let db = increments_along(real, bundle)?;
    let n = bundle.grid().steps();
    let m = bundle.n_paths();
    let (values, quadratic_variation) = (0..m)
        .into_par_iter()
        .map(|p| {
            let mut s = T::zero();
            let mut qv = T::zero();
            for k in 0..n {
                let v = integrand[(k + 1) * m + p] * db[k * m + p];
                s += v;
                qv += v * v;
            }
            (s, qv)
        })
        .unzip();
    Ok(BackwardIntegralResult { values, quadratic_variation, steps: n })
}

pub fn quadratic_variation<T: Real>(
    integrand: &[T],
    real: &FieldRealization<T>,
    bundle: &PathBundle<T>,
) -> Result<Vec<T>> {
    Ok(backward_integral(integrand, real, bundle)?.quadratic_variation)
}

/// Trapezoid quadrature of `int f_r^2 q(r, X_r, X_r) dr` along each path.
pub fn qv_quadrature<T: Real>(integrand: &[T], kernel: &CovarianceKernel<T>, bundle: &PathBundle<T>) -> Result<Vec<T>> {
    check_integrand(integrand, bundle)?;
    let g = bundle.grid();
    let n = g.steps();
    let m = bundle.n_paths();
    let half = T::lit(0.5);
    Ok((0..m)
        .into_par_iter()
        .map(|p| {
            let h = |k: usize| {
                let x = bundle.state(k, p);
                let f = integrand[k * m + p];
                f * f * kernel.diag(g.time(k), x)
            };
            let mut acc = T::zero();
            let mut hl = h(0);
            for k in 0..n {
                let hr = h(k + 1);
                acc += half * (hl + hr) * g.dt(k);
                hl = hr;
            }
            acc
        })
        .collect())
}

/// Integrand sampled as `f(t_k, X_k)` for every step and path.
pub fn sample_integrand<T: Real>(bundle: &PathBundle<T>, f: impl Fn(T, &[T]) -> T + Sync) -> Vec<T> {
    let g = bundle.grid();
    let m = bundle.n_paths();
    (0..=g.steps())
        .flat_map(|k| (0..m).map(move |p| (k, p)))
        .map(|(k, p)| f(g.time(k), bundle.state(k, p)))
        .collect()
}
