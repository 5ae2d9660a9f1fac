use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{cholesky, solve_normal_equations};
use crate::scalar::Real;

/// Regression basis for the conditional expectations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BasisKind {
    /// Monomials of total degree `<= degree` in standardized inputs.
    Polynomial { degree: u32 },
    /// Hat functions on equal-mass knots (one input dimension only).
    PiecewiseLinear { bins: usize },
}

impl Default for BasisKind {
    fn default() -> Self {
        Self::Polynomial { degree: 4 }
    }
}

const CHUNK: usize = 4096;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
enum Features<T> {
    /// Exponent table over the active coordinates.
    Poly { exponents: Vec<Vec<u32>> },
    /// Knots in the standardized active coordinate.
    Hats { knots: Vec<T> },
    Constant,
}

/// Standardization and feature map shared by every regression at a step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct FeatureMap<T> {
    dim: usize,
    mean: Vec<T>,
    scale: Vec<T>,
    active: Vec<usize>,
    features: Features<T>,
}

fn multi_indices(vars: usize, degree: u32) -> Vec<Vec<u32>> {
    let mut out = vec![vec![0u32; vars]];
    for total in 1..=degree {
        let mut cur = vec![0u32; vars];
        fn rec(i: usize, left: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
            if i + 1 == cur.len() {
                cur[i] = left;
                out.push(cur.clone());
                return;
            }
            for e in (0..=left).rev() {
                cur[i] = e;
                rec(i + 1, left - e, cur, out);
            }
        }
        if vars > 0 {
            rec(0, total, &mut cur, &mut out);
        }
    }
    out
}

impl<T: Real> FeatureMap<T> {
    /// Builds the map from the design points `xs` (`M*d`, path-major).
    pub fn build(kind: BasisKind, xs: &[T], dim: usize) -> Result<Self> {
        let m = xs.len() / dim.max(1);
        if m == 0 {
            return Err(invalid("empty regression design"));
        }
        let mf = T::from_usize_lossy(m);
        let mut mean = vec![T::zero(); dim];
        let mut scale = vec![T::zero(); dim];
        for i in 0..dim {
            let mu = xs.iter().skip(i).step_by(dim).copied().sum::<T>() / mf;
            let var = xs.iter().skip(i).step_by(dim).map(|&v| (v - mu) * (v - mu)).sum::<T>() / mf;
            mean[i] = mu;
            let sd = var.sqrt();
            // Coordinates with no spread carry no information: drop them.
            scale[i] = if sd > T::lit(1e-12) * (T::one() + mu.abs()) { sd } else { T::zero() };
        }
        let active: Vec<usize> = (0..dim).filter(|&i| scale[i] > T::zero()).collect();
        let features = if active.is_empty() {
            Features::Constant
        } else {
            match kind {
                BasisKind::Polynomial { degree } => Features::Poly { exponents: multi_indices(active.len(), degree) },
                BasisKind::PiecewiseLinear { bins } => {
                    if active.len() != 1 {
                        return Err(invalid("piecewise-linear basis supports one active input dimension"));
                    }
                    let i = active[0];
                    let mut u: Vec<T> = xs.iter().skip(i).step_by(dim).map(|&v| (v - mean[i]) / scale[i]).collect();
                    u.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
                    let bins = bins.max(1);
                    let mut knots: Vec<T> = (0..=bins).map(|j| u[((m - 1) * j) / bins]).collect();
                    knots.dedup_by(|a, b| (*a - *b).abs() <= T::lit(1e-12));
                    if knots.len() < 2 {
                        Features::Constant
                    } else {
                        Features::Hats { knots }
                    }
                }
            }
        };
        Ok(Self { dim, mean, scale, active, features })
    }

    pub fn len(&self) -> usize {
        match &self.features {
            Features::Poly { exponents } => exponents.len(),
            Features::Hats { knots } => knots.len(),
            Features::Constant => 1,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.features, Features::Constant)
    }

    fn standardized(&self, x: &[T], u: &mut Vec<T>) {
        u.clear();
        u.extend(self.active.iter().map(|&i| (x[i] - self.mean[i]) / self.scale[i]));
    }

    fn hat_cell(knots: &[T], u: T) -> (usize, T) {
        let n = knots.len();
        if u <= knots[0] {
            return (0, T::one());
        }
        if u >= knots[n - 1] {
            return (n - 2, T::zero());
        }
        let j = knots.partition_point(|&k| k <= u).saturating_sub(1).min(n - 2);
        let w = (knots[j + 1] - u) / (knots[j + 1] - knots[j]);
        (j, w)
    }

    /// Feature vector at `x` into `out` (length `len()`).
    pub fn eval(&self, x: &[T], out: &mut [T], scratch: &mut Vec<T>) {
        match &self.features {
            Features::Constant => out[0] = T::one(),
            Features::Poly { exponents } => {
                self.standardized(x, scratch);
                // Power table u_i^0..u_i^deg behind the standardized inputs.
                let k = scratch.len();
                let deg = exponents.last().map_or(0, |e| e.iter().sum::<u32>()) as usize;
                scratch.resize(k + k * (deg + 1), T::zero());
                let (u, pw) = scratch.split_at_mut(k);
                for i in 0..k {
                    let row = &mut pw[i * (deg + 1)..(i + 1) * (deg + 1)];
                    row[0] = T::one();
                    for j in 1..=deg {
                        row[j] = row[j - 1] * u[i];
                    }
                }
                for (o, e) in out.iter_mut().zip(exponents) {
                    let mut v = T::one();
                    for (i, &p) in e.iter().enumerate() {
                        v *= pw[i * (deg + 1) + p as usize];
                    }
                    *o = v;
                }
            }
            Features::Hats { knots } => {
                self.standardized(x, scratch);
                out.iter_mut().for_each(|o| *o = T::zero());
                let (j, w) = Self::hat_cell(knots, scratch[0]);
                out[j] = w;
                out[j + 1] = T::one() - w;
            }
        }
    }

    /// Jacobian of the feature vector: `out[f * d + i] = d feature_f / d x_i`.
    pub fn jacobian(&self, x: &[T], out: &mut [T], scratch: &mut Vec<T>) {
        let d = self.dim;
        out.iter_mut().for_each(|o| *o = T::zero());
        match &self.features {
            Features::Constant => {}
            Features::Poly { exponents } => {
                self.standardized(x, scratch);
                for (f, e) in exponents.iter().enumerate() {
                    for (a, &i) in self.active.iter().enumerate() {
                        if e[a] == 0 {
                            continue;
                        }
                        let mut v = T::lit(f64::from(e[a])) * scratch[a].powi(e[a] as i32 - 1) / self.scale[i];
                        for (b, (u, &p)) in scratch.iter().zip(e).enumerate() {
                            if b != a {
                                v *= u.powi(p as i32);
                            }
                        }
                        out[f * d + i] = v;
                    }
                }
            }
            Features::Hats { knots } => {
                self.standardized(x, scratch);
                let u = scratch[0];
                let n = knots.len();
                if u > knots[0] && u < knots[n - 1] {
                    let (j, _) = Self::hat_cell(knots, u);
                    let i = self.active[0];
                    let s = T::one() / ((knots[j + 1] - knots[j]) * self.scale[i]);
                    out[j * d + i] = -s;
                    out[(j + 1) * d + i] = s;
                }
            }
        }
    }
}

/// Least-squares projector onto the span of a feature map for one design.
pub struct Design<'a, T> {
    map: FeatureMap<T>,
    xs: &'a [T],
    gram: Vec<T>,
    step: usize,
}

impl<'a, T: Real> Design<'a, T> {
    pub fn new(kind: BasisKind, xs: &'a [T], dim: usize, step: usize) -> Result<Self> {
        let map = FeatureMap::build(kind, xs, dim)?;
        let p = map.len();
        let m = xs.len() / dim;
        // Fixed chunking keeps the reduction order independent of scheduling.
        let parts: Vec<Vec<T>> = (0..m.div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| {
                let mut acc = vec![T::zero(); p * p];
                let mut phi = vec![T::zero(); p];
                let mut scratch = Vec::new();
                for r in c * CHUNK..((c + 1) * CHUNK).min(m) {
                    map.eval(&xs[r * dim..(r + 1) * dim], &mut phi, &mut scratch);
                    for i in 0..p {
                        for j in 0..=i {
                            acc[i * p + j] += phi[i] * phi[j];
                        }
                    }
                }
                acc
            })
            .collect();
        let mut gram = vec![T::zero(); p * p];
        for part in parts {
            for (g, a) in gram.iter_mut().zip(part) {
                *g += a;
            }
        }
        for i in 0..p {
            for j in 0..i {
                gram[j * p + i] = gram[i * p + j];
            }
        }
        if cholesky(&gram, p, T::zero()).is_err() && p > 1 {
            return Err(Error::BasisDegeneracy { step });
        }
        Ok(Self { map, xs, gram, step })
    }

    pub fn map(&self) -> &FeatureMap<T> {
        &self.map
    }

    pub fn n_samples(&self) -> usize {
        self.xs.len() / self.map.dim
    }

    fn rank_tol() -> T {
        T::epsilon().sqrt() * T::lit(1e-2)
    }

    /// Coefficients (`p * targets.len()`, interleaved) of the projections.
    pub fn fit(&self, targets: &[&[T]]) -> Result<Vec<T>> {
        let p = self.map.len();
        let nr = targets.len();
        let m = self.n_samples();
        let d = self.map.dim;
        let parts: Vec<Vec<T>> = (0..m.div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| {
                let mut acc = vec![T::zero(); p * nr];
                let mut phi = vec![T::zero(); p];
                let mut scratch = Vec::new();
                for r in c * CHUNK..((c + 1) * CHUNK).min(m) {
                    self.map.eval(&self.xs[r * d..(r + 1) * d], &mut phi, &mut scratch);
                    for (t, tgt) in targets.iter().enumerate() {
                        let v = tgt[r];
                        for i in 0..p {
                            acc[i * nr + t] += phi[i] * v;
                        }
                    }
                }
                acc
            })
            .collect();
        let mut rhs = vec![T::zero(); p * nr];
        for part in parts {
            for (a, b) in rhs.iter_mut().zip(part) {
                *a += b;
            }
        }
        solve_normal_equations(&self.gram, p, &rhs, nr, Self::rank_tol()).ok_or(Error::BasisDegeneracy { step: self.step })
    }

    /// Fitted values of output `r` of `coeffs` at every design point.
    pub fn fitted(&self, coeffs: &[T], nr: usize, r: usize) -> Vec<T> {
        let p = self.map.len();
        let d = self.map.dim;
        self.xs
            .par_chunks(d)
            .map_init(
                || (vec![T::zero(); p], Vec::new()),
                |(phi, scratch), x| {
                    self.map.eval(x, phi, scratch);
                    (0..p).map(|i| phi[i] * coeffs[i * nr + r]).sum()
                },
            )
            .collect()
    }

    pub fn surface(&self, coeffs: Vec<T>, nr: usize) -> Surface<T> {
        Surface { map: self.map.clone(), coeffs, n_outputs: nr }
    }
}

/// Fitted regression surface `x -> (u_0(x), ..., u_{r-1}(x))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Surface<T> {
    map: FeatureMap<T>,
    coeffs: Vec<T>,
    n_outputs: usize,
}

impl<T: Real> Surface<T> {
    pub fn n_outputs(&self) -> usize {
        self.n_outputs
    }

    pub fn coefficients(&self) -> &[T] {
        &self.coeffs
    }

    pub fn feature_map(&self) -> &FeatureMap<T> {
        &self.map
    }

    pub fn eval(&self, r: usize, x: &[T]) -> T {
        let p = self.map.len();
        let mut phi = vec![T::zero(); p];
        let mut scratch = Vec::new();
        self.map.eval(x, &mut phi, &mut scratch);
        (0..p).map(|i| phi[i] * self.coeffs[i * self.n_outputs + r]).sum()
    }

    /// Gradient of output `r` at `x`.
    pub fn gradient(&self, r: usize, x: &[T], out: &mut [T]) {
        let p = self.map.len();
        let d = self.map.dim;
        let mut jac = vec![T::zero(); p * d];
        let mut scratch = Vec::new();
        self.map.jacobian(x, &mut jac, &mut scratch);
        for i in 0..d {
            out[i] = (0..p).map(|f| jac[f * d + i] * self.coeffs[f * self.n_outputs + r]).sum();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn multi_index_counts() {
        assert_eq!(multi_indices(1, 4).len(), 5);
        assert_eq!(multi_indices(2, 2).len(), 6);
        assert_eq!(multi_indices(3, 4).len(), 35);
    }

    #[test]
    fn polynomial_fit_recovers_cubic_and_gradient() {
        let xs: Vec<f64> = (0..200).map(|i| -2.0 + 4.0 * i as f64 / 199.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 1.0 - 2.0 * x + 0.5 * x * x * x).collect();
        let d = Design::new(BasisKind::default(), &xs, 1, 0).unwrap();
        let c = d.fit(&[&ys]).unwrap();
        let s = d.surface(c, 1);
        assert!((s.eval(0, &[0.7]) - (1.0 - 1.4 + 0.5 * 0.343)).abs() < 1e-9);
        let mut g = [0.0];
        s.gradient(0, &[0.7], &mut g);
        assert!((g[0] - (-2.0 + 1.5 * 0.49)).abs() < 1e-8);
    }

    #[test]
    fn hats_interpolate_piecewise_linear_data() {
        let xs: Vec<f64> = (0..1000).map(|i| i as f64 / 999.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x + 1.0).collect();
        let d = Design::new(BasisKind::PiecewiseLinear { bins: 32 }, &xs, 1, 0).unwrap();
        let s = d.surface(d.fit(&[&ys]).unwrap(), 1);
        assert!((s.eval(0, &[0.4]) - 2.2).abs() < 1e-9);
        let mut g = [0.0];
        s.gradient(0, &[0.4], &mut g);
        assert!((g[0] - 3.0).abs() < 1e-6);
    }

    #[test]
    fn coincident_points_reduce_to_the_mean() {
        let xs = vec![0.5f64; 10];
        let ys: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let d = Design::new(BasisKind::default(), &xs, 1, 3).unwrap();
        assert!(d.map().is_constant());
        let c = d.fit(&[&ys]).unwrap();
        assert!((c[0] - 4.5).abs() < 1e-12);
    }

    #[test]
    fn too_few_distinct_points_is_degenerate() {
        let xs = vec![0.0f64, 1.0, 0.0, 1.0, 0.0, 1.0];
        match Design::new(BasisKind::default(), &xs, 1, 7) {
            Err(Error::BasisDegeneracy { step: 7 }) => {}
            Ok(d) => {
                let ys = vec![1.0; 6];
                assert!(matches!(d.fit(&[&ys]), Err(Error::BasisDegeneracy { step: 7 })));
            }
            Err(e) => panic!("{e}"),
        }
    }
}
