use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::scalar::Real;

/// Bounded non-negative time factor `m(s)` multiplying a base kernel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", bound = "T: Real")]
pub enum TimeFactor<T> {
    /// `mean + amplitude * cos(2 pi s / period)`, requires `mean >= |amplitude|`.
    Cosine { mean: T, amplitude: T, period: T },
}

impl<T: Real> TimeFactor<T> {
    #[inline]
    pub fn eval(&self, s: T) -> T {
        match *self {
            TimeFactor::Cosine { mean, amplitude, period } => {
                mean + amplitude * (T::TAU() * s / period).cos()
            }
        }
    }

    pub fn sup(&self) -> T {
        match *self {
            TimeFactor::Cosine { mean, amplitude, .. } => mean + amplitude.abs(),
        }
    }
}

/// Closed registry of covariance families.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", bound = "T: Real")]
pub enum KernelFamily<T> {
    Constant { q0: T },
    /// `amplitude * exp(-|x - y| / length)`
    Exponential { length: T, amplitude: T },
    /// `amplitude * exp(-|x - y|^2 / (2 length^2))`
    SquaredExponential { length: T, amplitude: T },
    TimeModulated { base: Box<KernelFamily<T>>, modulation: TimeFactor<T> },
    /// Explicit Gram table on a finite node set; zero away from the nodes.
    Table { nodes: Vec<Vec<T>>, values: Vec<T> },
}

/// Spatial covariance `q(s, x, y)` of the martingale field together with
/// the regularity constants the well-posedness conditions refer to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct CovarianceKernel<T> {
    pub family: KernelFamily<T>,
    /// Growth exponent in `|q| <= K (1 + |x|^kappa + |y|^kappa)`.
    pub kappa: T,
    pub bound_k: T,
    /// Uniform bound `sup |q| <= M`, when the family has one.
    pub bound_m: Option<T>,
    /// Hoelder exponent of `x -> q(x, x) - q(x, y)`.
    pub holder_gamma: T,
}

fn dist2<T: Real>(x: &[T], y: &[T]) -> T {
    x.iter().zip(y).map(|(a, b)| (*a - *b) * (*a - *b)).sum()
}

impl<T: Real> KernelFamily<T> {
    #[inline]
    pub fn eval(&self, s: T, x: &[T], y: &[T]) -> T {
        match self {
            KernelFamily::Constant { q0 } => *q0,
            KernelFamily::Exponential { length, amplitude } => {
                *amplitude * (-dist2(x, y).sqrt() / *length).exp()
            }
            KernelFamily::SquaredExponential { length, amplitude } => {
                *amplitude * (-dist2(x, y) / (T::lit(2.0) * *length * *length)).exp()
            }
            KernelFamily::TimeModulated { base, modulation } => modulation.eval(s) * base.eval(s, x, y),
            KernelFamily::Table { nodes, values } => {
                let n = nodes.len();
                let find = |p: &[T]| nodes.iter().position(|q| dist2(q, p) <= T::lit(1e-24));
                match (find(x), find(y)) {
                    (Some(i), Some(j)) => values[i * n + j],
                    _ => T::zero(),
                }
            }
        }
    }

    /// Kernel with the time factor evaluated away: `q(s, ., .) = scale * base`.
    pub fn frozen_at(&self, s: T) -> (T, &KernelFamily<T>) {
        match self {
            KernelFamily::TimeModulated { base, modulation } => {
                let (inner, fam) = base.frozen_at(s);
                (inner * modulation.eval(s), fam)
            }
            other => (T::one(), other),
        }
    }

    fn check(&self) -> Result<()> {
        match self {
            KernelFamily::Constant { q0 } if !(q0.is_finite() && *q0 >= T::zero()) => {
                Err(invalid("constant kernel needs finite q0 >= 0"))
            }
            KernelFamily::Exponential { length, amplitude }
            | KernelFamily::SquaredExponential { length, amplitude }
                if !(*length > T::zero() && *amplitude >= T::zero() && amplitude.is_finite()) =>
            {
                Err(invalid("kernel needs length > 0 and finite amplitude >= 0"))
            }
            KernelFamily::TimeModulated { base, modulation } => {
                let TimeFactor::Cosine { mean, amplitude, period } = *modulation;
                if !(period > T::zero() && mean >= amplitude.abs()) {
                    return Err(invalid("time factor needs period > 0 and mean >= |amplitude|"));
                }
                base.check()
            }
            KernelFamily::Table { nodes, values } => {
                if values.len() != nodes.len() * nodes.len() {
                    return Err(invalid("table kernel needs an n x n value table"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    fn sup_abs(&self) -> T {
        match self {
            KernelFamily::Constant { q0 } => q0.abs(),
            KernelFamily::Exponential { amplitude, .. } | KernelFamily::SquaredExponential { amplitude, .. } => {
                amplitude.abs()
            }
            KernelFamily::TimeModulated { base, modulation } => modulation.sup() * base.sup_abs(),
            KernelFamily::Table { values, .. } => values.iter().fold(T::zero(), |m, v| m.max(v.abs())),
        }
    }

    /// Constant `C` with `|q(x,x) - q(x,y)| <= C |x - y|`.
    fn lipschitz_gap(&self) -> T {
        match self {
            KernelFamily::Constant { .. } => T::zero(),
            KernelFamily::Exponential { length, amplitude } => *amplitude / *length,
            KernelFamily::SquaredExponential { length, amplitude } => {
                *amplitude / (T::SQRT_2() * *length)
            }
            KernelFamily::TimeModulated { base, modulation } => modulation.sup() * base.lipschitz_gap(),
            KernelFamily::Table { .. } => self.sup_abs(),
        }
    }
}

impl<T: Real> CovarianceKernel<T> {
    /// Builds a kernel with regularity constants derived from the family.
    pub fn new(family: KernelFamily<T>) -> Result<Self> {
        family.check()?;
        let m = family.sup_abs();
        let k = m.max(family.lipschitz_gap());
        Ok(Self { family, kappa: T::zero(), bound_k: k, bound_m: Some(m), holder_gamma: T::one() })
    }

    pub fn constant(q0: T) -> Result<Self> {
        Self::new(KernelFamily::Constant { q0 })
    }

    pub fn exponential(length: T, amplitude: T) -> Result<Self> {
        Self::new(KernelFamily::Exponential { length, amplitude })
    }

    pub fn squared_exponential(length: T, amplitude: T) -> Result<Self> {
        Self::new(KernelFamily::SquaredExponential { length, amplitude })
    }

    pub fn time_modulated(base: KernelFamily<T>, modulation: TimeFactor<T>) -> Result<Self> {
        Self::new(KernelFamily::TimeModulated { base: Box::new(base), modulation })
    }

    pub fn table(nodes: Vec<Vec<T>>, values: Vec<T>) -> Result<Self> {
        Self::new(KernelFamily::Table { nodes, values })
    }

    /// `q(s, x, y)`.
    pub fn eval(&self, s: T, x: &[T], y: &[T]) -> Result<T> {
        if x.len() != y.len() {
            return Err(invalid("kernel arguments differ in dimension"));
        }
        if !s.is_finite() || x.iter().chain(y).any(|v| !v.is_finite()) {
            return Err(invalid("kernel arguments must be finite"));
        }
        Ok(self.family.eval(s, x, y))
    }

    /// `q(s, x, y)` without argument validation.
    #[inline]
    pub fn eval_unchecked(&self, s: T, x: &[T], y: &[T]) -> T {
        self.family.eval(s, x, y)
    }

    /// `q(s, x, x)`.
    #[inline]
    pub fn diag(&self, s: T, x: &[T]) -> T {
        self.family.eval(s, x, x)
    }

    pub fn is_time_dependent(&self) -> bool {
        matches!(self.family, KernelFamily::TimeModulated { .. })
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.family, KernelFamily::Constant { q0 } if q0 == T::zero())
    }
}
