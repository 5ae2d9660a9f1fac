use serde::{Deserialize, Serialize};

use crate::scalar::Real;

/// Monte Carlo mean with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

impl Estimate {
    pub fn from_samples<T: Real>(xs: &[T]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self { mean: f64::NAN, stderr: f64::NAN, n };
        }
        let mean = xs.iter().map(|x| x.as_f64()).sum::<f64>() / n as f64;
        let stderr = if n > 1 {
            let var = xs.iter().map(|x| (x.as_f64() - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, stderr, n }
    }

    /// Standard error of the difference of two independent estimates.
    pub fn combined_stderr(&self, other: &Estimate) -> f64 {
        self.stderr.hypot(other.stderr)
    }

    /// `|self - target| <= k * stderr`.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.stderr
    }
}

/// Residual record emitted for convergence tables.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub struct ResidualStats {
    pub mean: f64,
    pub stderr: f64,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "dt")]
    pub dt: f64,
}

impl ResidualStats {
    pub fn from_samples<T: Real>(xs: &[T], dt: f64) -> Self {
        let e = Estimate::from_samples(xs);
        Self { mean: e.mean, stderr: e.stderr, n: e.n, dt }
    }

    pub fn mean_within(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.stderr
    }
}

/// Sample variance (unbiased) of an `f64` slice.
pub fn variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
}

/// Sample covariance (unbiased) of paired samples.
pub fn covariance(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / (n - 1.0)
}

/// Standard error of the sample covariance estimator for zero-mean pairs.
pub fn covariance_stderr(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let prods: Vec<f64> = xs.iter().zip(ys).map(|(x, y)| x * y).collect();
    (variance(&prods) / n).sqrt()
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v: Vec<f64> = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn estimate_of_constant_has_zero_stderr() {
        let e = Estimate::from_samples(&[2.0f64; 10]);
        assert_eq!(e.mean, 2.0);
        assert_eq!(e.stderr, 0.0);
    }

    #[test]
    fn residual_stats_json_keys() {
        let r = ResidualStats { mean: 0.5, stderr: 0.1, n: 4, dt: 0.25 };
        let s = serde_json::to_string(&r).unwrap();
        assert_eq!(s, r#"{"mean":0.5,"stderr":0.1,"N":4,"dt":0.25}"#);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
