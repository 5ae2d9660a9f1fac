use serde::{Deserialize, Serialize};

use crate::scalar::Real;

/// Terminal data `phi: R^d -> R` from a closed registry of smooth families.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum TerminalCondition {
    Zero,
    Constant { value: f64 },
    /// `sum_j coeffs[j] s^j` with `s = clamp * tanh(x_0 / clamp)`.
    PolynomialClamped { coeffs: Vec<f64>, clamp: f64 },
    /// `height * exp(-|x - center|^2 / (2 width^2))`
    GaussianBump { center: Vec<f64>, width: f64, height: f64 },
    /// `amplitude * cos(frequency * x_0 + phase)`
    Cosine { amplitude: f64, frequency: f64, phase: f64 },
    Sum { parts: Vec<TerminalCondition> },
}

impl TerminalCondition {
    /// `phi(x) = x_0` up to a far-away clamp.
    pub fn identity() -> Self {
        Self::PolynomialClamped { coeffs: vec![0.0, 1.0], clamp: 50.0 }
    }

    pub fn bump(center: f64, width: f64) -> Self {
        Self::GaussianBump { center: vec![center], width, height: 1.0 }
    }

    pub fn sup_bound(&self) -> Option<f64> {
        match self {
            Self::Zero => Some(0.0),
            Self::Constant { value } => Some(value.abs()),
            Self::PolynomialClamped { coeffs, clamp } => {
                Some(coeffs.iter().enumerate().map(|(j, c)| c.abs() * clamp.abs().powi(j as i32)).sum())
            }
            Self::GaussianBump { height, .. } => Some(height.abs()),
            Self::Cosine { amplitude, .. } => Some(amplitude.abs()),
            Self::Sum { parts } => parts.iter().map(Self::sup_bound).sum(),
        }
    }

    pub fn eval<T: Real>(&self, x: &[T]) -> T {
        match self {
            Self::Zero => T::zero(),
            Self::Constant { value } => T::lit(*value),
            Self::PolynomialClamped { coeffs, clamp } => {
                let c = T::lit(*clamp);
                let s = c * (x[0] / c).tanh();
                coeffs.iter().rev().fold(T::zero(), |acc, &a| acc * s + T::lit(a))
            }
            Self::GaussianBump { center, width, height } => {
                let r2: T = x.iter().zip(center).map(|(a, &b)| (*a - T::lit(b)) * (*a - T::lit(b))).sum();
                T::lit(*height) * (-r2 / (T::lit(2.0 * width * width))).exp()
            }
            Self::Cosine { amplitude, frequency, phase } => {
                T::lit(*amplitude) * (T::lit(*frequency) * x[0] + T::lit(*phase)).cos()
            }
            Self::Sum { parts } => parts.iter().map(|p| p.eval(x)).sum(),
        }
    }

    pub fn gradient<T: Real>(&self, x: &[T], out: &mut [T]) {
        out.iter_mut().for_each(|o| *o = T::zero());
        self.add_gradient(x, out);
    }

    fn add_gradient<T: Real>(&self, x: &[T], out: &mut [T]) {
        match self {
            Self::Zero | Self::Constant { .. } => {}
            Self::PolynomialClamped { coeffs, clamp } => {
                let c = T::lit(*clamp);
                let th = (x[0] / c).tanh();
                let s = c * th;
                let ds = T::one() - th * th;
                let dp = coeffs
                    .iter()
                    .enumerate()
                    .skip(1)
                    .rev()
                    .fold(T::zero(), |acc, (j, &a)| acc * s + T::lit(a * j as f64));
                out[0] += dp * ds;
            }
            Self::GaussianBump { width, .. } => {
                let v = self.eval(x);
                let Self::GaussianBump { center, .. } = self else { unreachable!() };
                let w2 = T::lit(width * width);
                for (i, (a, &b)) in x.iter().zip(center).enumerate() {
                    out[i] += -v * (*a - T::lit(b)) / w2;
                }
            }
            Self::Cosine { amplitude, frequency, phase } => {
                out[0] += -T::lit(amplitude * frequency) * (T::lit(*frequency) * x[0] + T::lit(*phase)).sin();
            }
            Self::Sum { parts } => parts.iter().for_each(|p| p.add_gradient(x, out)),
        }
    }
}
