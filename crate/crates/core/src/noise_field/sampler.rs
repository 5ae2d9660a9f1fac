use rand::Rng;
use serde::{Deserialize, Serialize};

use super::kernel::{CovarianceKernel, KernelFamily};
use super::realization::{lex_cmp, FieldRealization, PointRequest, StepField};
use crate::error::{invalid, Error, Result};
use crate::grid::TimeGrid;
use crate::linalg::{cholesky_jittered, pivoted_cholesky};
use crate::rng::stream;
use crate::scalar::Real;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct SamplerConfig<T> {
    /// Points closer than this (max-norm) are merged before factorization.
    pub dedup_tol: T,
    /// Relative diagonal jitter ladder tried in order.
    pub jitters: Vec<T>,
    /// Above this many points the dense factorization is replaced by a
    /// pivoted low-rank one.
    pub dense_limit: usize,
    /// Relative residual-diagonal tolerance of the pivoted factorization.
    pub low_rank_tol: T,
}

impl<T: Real> Default for SamplerConfig<T> {
    fn default() -> Self {
        Self {
            dedup_tol: T::lit(1e-12),
            jitters: [1e-12, 1e-11, 1e-10, 1e-9, 1e-8].iter().map(|&j| T::lit(j)).collect(),
            dense_limit: 1500,
            low_rank_tol: T::lit(1e-12),
        }
    }
}

/// Sorted points with duplicates (within `tol`) removed.
fn dedup_sorted<T: Real>(raw: &[T], dim: usize, tol: T) -> Vec<T> {
    let n = raw.len() / dim;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| lex_cmp(&raw[a * dim..(a + 1) * dim], &raw[b * dim..(b + 1) * dim]));
    let mut out: Vec<T> = Vec::with_capacity(raw.len());
    for i in idx {
        let p = &raw[i * dim..(i + 1) * dim];
        let dup = out.len() >= dim
            && out[out.len() - dim..].iter().zip(p).all(|(a, b)| (*a - *b).abs() <= tol);
        if !dup {
            out.extend_from_slice(p);
        }
    }
    out
}

/// Draws one step's increments `N(0, q(t, ., .) dt)` jointly over `points`.
/// Returns the values and the relative jitter that was needed.
#[allow(clippy::too_many_arguments)]
pub fn sample_step<T: Real, R: Rng>(
    kernel: &CovarianceKernel<T>,
    t: T,
    dt: T,
    points: &[T],
    dim: usize,
    cfg: &SamplerConfig<T>,
    rng: &mut R,
    step: usize,
) -> Result<(Vec<T>, T)> {
    let n = points.len().checked_div(dim).unwrap_or(0);
    if n == 0 {
        return Ok((Vec::new(), T::zero()));
    }
    if dt == T::zero() {
        return Ok((vec![T::zero(); n], T::zero()));
    }
    if dt < T::zero() {
        return Err(invalid("negative step length"));
    }
    let (scale, base) = kernel.family.frozen_at(t);
    let var = scale * dt;
    let pt = |i: usize| &points[i * dim..(i + 1) * dim];
    match base {
        KernelFamily::Constant { q0 } => {
            // rank one: the whole step shares a single Gaussian
            let v = (*q0 * var).sqrt() * T::standard_normal(rng);
            Ok((vec![v; n], T::zero()))
        }
        KernelFamily::Exponential { length, amplitude } if dim == 1 => {
            // 1-d exponential covariance is Markov along sorted points, so
            // its Cholesky factor is bidiagonal.
            let s = (*amplitude * var).sqrt();
            let mut out = Vec::with_capacity(n);
            let mut prev = s * T::standard_normal(rng);
            out.push(prev);
            for i in 1..n {
                let rho = (-(points[i] - points[i - 1]).abs() / *length).exp();
                let innov = (T::one() - rho * rho).max(T::zero()).sqrt();
                prev = rho * prev + s * innov * T::standard_normal(rng);
                out.push(prev);
            }
            Ok((out, T::zero()))
        }
        _ if n <= cfg.dense_limit => {
            let mut gram = vec![T::zero(); n * n];
            for i in 0..n {
                for j in 0..=i {
                    let v = base.eval(t, pt(i), pt(j)) * var;
                    gram[i * n + j] = v;
                    gram[j * n + i] = v;
                }
            }
            let (l, jitter) = cholesky_jittered(&gram, n, &cfg.jitters)
                .map_err(|cond| Error::NumericalDegeneracy { step, condition: cond.as_f64() })?;
            let z: Vec<T> = (0..n).map(|_| T::standard_normal(rng)).collect();
            let out = (0..n)
                .map(|i| (0..=i).map(|k| l[i * n + k] * z[k]).sum())
                .collect();
            Ok((out, jitter))
        }
        _ => {
            let cols = pivoted_cholesky(n, |i, j| base.eval(t, pt(i), pt(j)) * var, cfg.low_rank_tol)
                .map_err(|worst| Error::NumericalDegeneracy { step, condition: worst.as_f64() })?;
            let mut out = vec![T::zero(); n];
            for c in &cols {
                let z = T::standard_normal(rng);
                for (o, ci) in out.iter_mut().zip(c) {
                    *o += *ci * z;
                }
            }
            Ok((out, T::zero()))
        }
    }
}

/// Samples a field realization at the points declared in `request`.
///
/// Step `k` draws from stream `(seed, k)`, so identical inputs give
/// bit-identical output and steps are mutually independent.
pub fn sample_increments<T: Real>(
    kernel: &CovarianceKernel<T>,
    grid: &TimeGrid<T>,
    request: &PointRequest<T>,
    seed: u64,
) -> Result<FieldRealization<T>> {
    sample_increments_with(kernel, grid, request, seed, &SamplerConfig::default())
}

pub fn sample_increments_with<T: Real>(
    kernel: &CovarianceKernel<T>,
    grid: &TimeGrid<T>,
    request: &PointRequest<T>,
    seed: u64,
    cfg: &SamplerConfig<T>,
) -> Result<FieldRealization<T>> {
    if request.n_steps() != grid.steps() {
        return Err(invalid(format!(
            "point request covers {} steps, grid has {}",
            request.n_steps(),
            grid.steps()
        )));
    }
    let dim = request.dim();
    if dim == 0 {
        return Err(invalid("field dimension must be positive"));
    }
    let mut steps = Vec::with_capacity(grid.steps());
    let mut max_jitter = T::zero();
    for k in 0..grid.steps() {
        let raw = request.raw(k);
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(invalid(format!("non-finite evaluation point at step {k}")));
        }
        let points = dedup_sorted(raw, dim, cfg.dedup_tol);
        let mut rng = stream(seed, k as u64);
        let (values, jitter) = sample_step(kernel, grid.time(k), grid.dt(k), &points, dim, cfg, &mut rng, k)?;
        max_jitter = max_jitter.max(jitter);
        steps.push(StepField { points, values });
    }
    let counts: Vec<usize> = steps.iter().map(StepField::len).collect();
    let id = FieldRealization::compute_id(kernel, grid, seed, &counts);
    Ok(FieldRealization {
        kernel: kernel.clone(),
        grid: grid.clone(),
        dim,
        seed,
        id,
        steps,
        max_jitter,
        dedup_tol: cfg.dedup_tol,
    })
}

impl<T: Real> FieldRealization<T> {
    /// Copy with steps `range` redrawn from `new_seed` at the same points.
    /// Steps outside the range are left bit-identical.
    pub fn resample_steps(&self, range: std::ops::Range<usize>, new_seed: u64) -> Result<Self> {
        if range.end > self.steps.len() {
            return Err(invalid("resample range out of bounds"));
        }
        let cfg = SamplerConfig { dedup_tol: self.dedup_tol, ..SamplerConfig::default() };
        let mut out = self.clone();
        for k in range {
            let mut rng = stream(new_seed, k as u64);
            let (values, _) = sample_step(
                &self.kernel,
                self.grid.time(k),
                self.grid.dt(k),
                &self.steps[k].points,
                self.dim,
                &cfg,
                &mut rng,
                k,
            )?;
            out.steps[k].values = values;
        }
        out.id = super::realization::RealizationId(crate::rng::mix64(self.id.0 ^ new_seed));
        Ok(out)
    }
}
