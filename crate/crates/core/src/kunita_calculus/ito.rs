use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::integral::{align, increments_along};
use crate::error::{invalid, Result};
use crate::forward_sde::PathBundle;
use crate::noise_field::FieldRealization;
use crate::scalar::Real;
use crate::stats::ResidualStats;

/// Integrand family for the pieces of a test process, evaluated at `X`'s
/// first coordinate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProcessTerm {
    Constant { value: f64 },
    /// `offset + slope * x_0`.
    Affine { offset: f64, slope: f64 },
}

impl ProcessTerm {
    pub const ZERO: Self = Self::Constant { value: 0.0 };

    #[inline]
    pub fn eval<T: Real>(&self, x: &[T]) -> T {
        match *self {
            Self::Constant { value } => T::lit(value),
            Self::Affine { offset, slope } => T::lit(offset) + T::lit(slope) * x[0],
        }
    }
}

/// `S_t = S_0 + int f ds + int g <-B(ds, X_s) + int h dW^0_s`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProcessSpec {
    pub s0: f64,
    pub f: ProcessTerm,
    pub g: ProcessTerm,
    pub h: ProcessTerm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestFunction {
    Square,
    Quartic,
    /// `exp(c tanh(x / c))`
    ClampedExp { clamp: u32 },
}

impl TestFunction {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "square" => Ok(Self::Square),
            "quartic" => Ok(Self::Quartic),
            "exp_clamped" | "clamped_exp" => Ok(Self::ClampedExp { clamp: 4 }),
            other => Err(invalid(format!("unknown test function `{other}`"))),
        }
    }

    /// `(phi, phi', phi'')`
    #[inline]
    pub fn eval<T: Real>(&self, x: T) -> (T, T, T) {
        match *self {
            Self::Square => (x * x, T::lit(2.0) * x, T::lit(2.0)),
            Self::Quartic => {
                let x2 = x * x;
                (x2 * x2, T::lit(4.0) * x2 * x, T::lit(12.0) * x2)
            }
            Self::ClampedExp { clamp } => {
                let c = T::lit(f64::from(clamp.max(1)));
                let u = (x / c).tanh();
                let e = (c * u).exp();
                let s = T::one() - u * u;
                (e, e * s, e * s * (s - T::lit(2.0) * u / c))
            }
        }
    }
}

/// Per-path terminal residuals `phi(S_T) - RHS`, with the full right-hand
/// side and with either bracket correction left out.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ItoResiduals {
    pub full: Vec<f64>,
    pub without_g: Vec<f64>,
    pub without_h: Vec<f64>,
}

impl ItoResiduals {
    pub fn extend(&mut self, other: ItoResiduals) {
        self.full.extend(other.full);
        self.without_g.extend(other.without_g);
        self.without_h.extend(other.without_h);
    }

    pub fn stats(&self, dt: f64) -> [ResidualStats; 3] {
        [
            ResidualStats::from_samples(&self.full, dt),
            ResidualStats::from_samples(&self.without_g, dt),
            ResidualStats::from_samples(&self.without_h, dt),
        ]
    }
}

/// Walks `S` along each path and evaluates both sides of the generalized
/// Ito formula. Forward pieces use the left point, the backward piece and
/// its integrand use the right point, and the brackets enter as
/// `-1/2 int phi'' g^2 q ds` and `+1/2 int phi'' h^2 ds`.
pub fn ito_residual<T: Real>(
    spec: &ProcessSpec,
    phi: TestFunction,
    real: &FieldRealization<T>,
    bundle: &PathBundle<T>,
) -> Result<ItoResiduals> {
    let o = align(real, bundle)?;
    let db = increments_along(real, bundle)?;
    let grid = bundle.grid();
    let n = grid.steps();
    let m = bundle.n_paths();
    let half = T::lit(0.5);
    let rows: Vec<(f64, f64, f64)> = (0..m)
        .into_par_iter()
        .map(|p| {
            let mut s = T::lit(spec.s0);
            let mut rhs = phi.eval(s).0;
            let (mut cg, mut ch) = (T::zero(), T::zero());
            for k in 0..n {
                let dt = grid.dt(k);
                let (xl, xr) = (bundle.state(k, p), bundle.state(k + 1, p));
                let h = spec.h.eval(xl);
                let a = spec.f.eval(xl) * dt + h * bundle.increment(k, p)[0];
                let g = spec.g.eval(xr);
                let b = g * db[k * m + p];
                let (_, d1, d2) = phi.eval(s);
                let sn = s + a + b;
                rhs += d1 * a + phi.eval(sn).1 * b;
                let q = real.kernel().eval_unchecked(real.grid().time(o + k), xr, xr);
                cg += half * d2 * g * g * q * dt;
                ch += half * d2 * h * h * dt;
                s = sn;
            }
            let end = phi.eval(s).0;
            (
                (end - (rhs - cg + ch)).as_f64(),
                (end - (rhs + ch)).as_f64(),
                (end - (rhs - cg)).as_f64(),
            )
        })
        .collect();
    let mut out = ItoResiduals::default();
    for (a, b, c) in rows {
        out.full.push(a);
        out.without_g.push(b);
        out.without_h.push(c);
    }
    Ok(out)
}

/// Bounded-variation multiplier for the product-rule check.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BvProcess {
    Constant { value: f64 },
    /// `exp(rate * t)`
    Exponential { rate: f64 },
    /// `exp(rate * int_0^t max(q(r, X_r, X_r), 1) dr)`
    ExpIntegral { rate: f64 },
}

/// Per-path terminal residual of `d(SQ) = S dQ + Q dS` summed over the grid,
/// with `dQ` taken from the sampled derivative of `Q` at the left point.
pub fn product_rule_residual<T: Real>(
    spec: &ProcessSpec,
    q: BvProcess,
    real: &FieldRealization<T>,
    bundle: &PathBundle<T>,
) -> Result<Vec<f64>> {
    let o = align(real, bundle)?;
    let db = increments_along(real, bundle)?;
    let grid = bundle.grid();
    let n = grid.steps();
    let m = bundle.n_paths();
    let kernel = real.kernel();
    let half = T::lit(0.5);
    Ok((0..m)
        .into_par_iter()
        .map(|p| {
            let qt = |k: usize| kernel.diag(real.grid().time(o + k), bundle.state(k, p)).max(T::one());
            // Q_k and its time derivative at each grid point.
            let mut qs = Vec::with_capacity(n + 1);
            let mut integral = T::zero();
            for k in 0..=n {
                if k > 0 {
                    integral += half * (qt(k - 1) + qt(k)) * grid.dt(k - 1);
                }
                let t = grid.time(k);
                let (v, dv) = match q {
                    BvProcess::Constant { value } => (T::lit(value), T::zero()),
                    BvProcess::Exponential { rate } => {
                        let v = (T::lit(rate) * t).exp();
                        (v, T::lit(rate) * v)
                    }
                    BvProcess::ExpIntegral { rate } => {
                        let v = (T::lit(rate) * integral).exp();
                        (v, T::lit(rate) * qt(k) * v)
                    }
                };
                qs.push((v, dv));
            }
            let mut s = T::lit(spec.s0);
            let mut res = T::zero();
            for k in 0..n {
                let dt = grid.dt(k);
                let (xl, xr) = (bundle.state(k, p), bundle.state(k + 1, p));
                let a = spec.f.eval(xl) * dt + spec.h.eval(xl) * bundle.increment(k, p)[0];
                let b = spec.g.eval(xr) * db[k * m + p];
                let sn = s + a + b;
                let ((q0, dq0), (q1, _)) = (qs[k], qs[k + 1]);
                res += (sn * q1 - s * q0) - s * dq0 * dt - (q0 * a + q1 * b);
                s = sn;
            }
            res.as_f64()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn test_function_derivatives_match_differences() {
        for phi in [TestFunction::Square, TestFunction::Quartic, TestFunction::ClampedExp { clamp: 3 }] {
            for &x in &[-2.5f64, -0.3, 0.0, 0.7, 4.0] {
                let h = 1e-5;
                let (_, d1, d2) = phi.eval(x);
                let fd1 = (phi.eval(x + h).0 - phi.eval(x - h).0) / (2.0 * h);
                let fd2 = (phi.eval(x + h).1 - phi.eval(x - h).1) / (2.0 * h);
                assert!((d1 - fd1).abs() <= 1e-6 * (1.0 + d1.abs()), "{phi:?} {x}");
                assert!((d2 - fd2).abs() <= 1e-6 * (1.0 + d2.abs()), "{phi:?} {x}");
            }
        }
    }

    #[test]
    fn unknown_test_function_rejected() {
        assert!(TestFunction::parse("cubic").is_err());
        assert_eq!(TestFunction::parse("square").unwrap(), TestFunction::Square);
    }
}
