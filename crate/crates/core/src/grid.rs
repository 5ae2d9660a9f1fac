use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::scalar::Real;

/// Strictly increasing time instants `t_0 < t_1 < ... < t_N`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct TimeGrid<T> {
    times: Vec<T>,
}

impl<T: Real> TimeGrid<T> {
    pub fn new(times: Vec<T>) -> Result<Self> {
        if times.len() < 2 {
            return Err(invalid("time grid needs at least two instants"));
        }
        if times.iter().any(|t| !t.is_finite()) {
            return Err(invalid("time grid contains non-finite instants"));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("time grid must be strictly increasing"));
        }
        Ok(Self { times })
    }

    /// `steps` equal steps on `[start, end]`. The endpoint is stored exactly.
    pub fn uniform(start: T, end: T, steps: usize) -> Result<Self> {
        if steps == 0 || !(end > start) {
            return Err(invalid("uniform grid needs steps >= 1 and end > start"));
        }
        let n = T::from_usize_lossy(steps);
        let mut times: Vec<T> = (0..=steps)
            .map(|k| start + (end - start) * T::from_usize_lossy(k) / n)
            .collect();
        times[steps] = end;
        Self::new(times)
    }

    #[inline]
    pub fn times(&self) -> &[T] {
        &self.times
    }

    #[inline]
    pub fn time(&self, k: usize) -> T {
        self.times[k]
    }

    /// Number of steps N (one less than the number of instants).
    #[inline]
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    #[inline]
    pub fn dt(&self, k: usize) -> T {
        self.times[k + 1] - self.times[k]
    }

    pub fn start(&self) -> T {
        self.times[0]
    }

    pub fn end(&self) -> T {
        self.times[self.times.len() - 1]
    }

    /// Sub-grid of instants `from..=to`.
    pub fn slice(&self, from: usize, to: usize) -> Result<Self> {
        if to <= from || to >= self.times.len() {
            return Err(invalid(format!("grid slice {from}..={to} out of range")));
        }
        Self::new(self.times[from..=to].to_vec())
    }

    /// Index `k` with `t_k == t` up to a relative tolerance.
    pub fn index_of(&self, t: T) -> Option<usize> {
        let scale = T::one().max(t.abs());
        let tol = T::lit(1e-9) * scale;
        let i = self.times.partition_point(|&s| s < t - tol);
        (i < self.times.len() && (self.times[i] - t).abs() <= tol).then_some(i)
    }

    /// Every instant shifted by `-offset`.
    pub fn shifted(&self, offset: T) -> Result<Self> {
        Self::new(self.times.iter().map(|&t| t - offset).collect())
    }

    /// Each step split into `factor` equal sub-steps.
    pub fn refined(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(invalid("refinement factor must be positive"));
        }
        let f = T::from_usize_lossy(factor);
        let mut out = Vec::with_capacity(self.steps() * factor + 1);
        for k in 0..self.steps() {
            let (a, b) = (self.times[k], self.times[k + 1]);
            for j in 0..factor {
                out.push(a + (b - a) * T::from_usize_lossy(j) / f);
            }
        }
        out.push(self.end());
        Self::new(out)
    }

    pub fn is_uniform(&self) -> bool {
        let dt0 = self.dt(0);
        (0..self.steps()).all(|k| (self.dt(k) - dt0).abs() <= T::lit(1e-9) * dt0.abs().max(T::one()))
    }

    /// Offset `o` such that `other.time(j) == self.time(o + j)` for all `j`.
    pub fn alignment_of(&self, other: &TimeGrid<T>) -> Option<usize> {
        let o = self.index_of(other.start())?;
        if o + other.steps() > self.steps() {
            return None;
        }
        let scale = T::one().max(other.end().abs());
        let tol = T::lit(1e-9) * scale;
        other
            .times
            .iter()
            .enumerate()
            .all(|(j, &t)| (self.times[o + j] - t).abs() <= tol)
            .then_some(o)
    }
}
