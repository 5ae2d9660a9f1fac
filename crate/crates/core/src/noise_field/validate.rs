use rand::Rng;
use serde::{Deserialize, Serialize};

use super::kernel::CovarianceKernel;
use crate::error::{invalid, Result};
use crate::linalg::symmetric_eigenvalues;
use crate::rng::stream;
use crate::scalar::Real;

/// Random probing of a kernel over a bounded box.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct ProbeSpec<T> {
    pub lower: Vec<T>,
    pub upper: Vec<T>,
    pub time_lo: T,
    pub time_hi: T,
    /// Number of random point sets for the Gram eigenvalue test.
    pub n_sets: usize,
    pub set_size: usize,
    /// Number of random pairs for the pointwise bounds.
    pub n_pairs: usize,
    pub seed: u64,
    pub eps_psd: T,
    /// Point sets probed in addition to the random ones.
    #[serde(default)]
    pub extra_sets: Vec<Vec<Vec<T>>>,
}

impl<T: Real> ProbeSpec<T> {
    pub fn boxed(lower: Vec<T>, upper: Vec<T>) -> Self {
        Self {
            lower,
            upper,
            time_lo: T::zero(),
            time_hi: T::one(),
            n_sets: 16,
            set_size: 12,
            n_pairs: 2000,
            seed: 0x5eed,
            eps_psd: T::lit(1e-10),
            extra_sets: Vec::new(),
        }
    }

    fn check(&self) -> Result<()> {
        if self.lower.is_empty() || self.lower.len() != self.upper.len() {
            return Err(invalid("probe box bounds must be non-empty and of equal dimension"));
        }
        if self.lower.iter().zip(&self.upper).any(|(a, b)| !(b > a)) {
            return Err(invalid("probe region is degenerate"));
        }
        if self.time_hi < self.time_lo || self.n_pairs == 0 {
            return Err(invalid("probe needs a time range and at least one pair"));
        }
        Ok(())
    }

    pub(crate) fn draw_point<R: Rng>(&self, rng: &mut R) -> Vec<T> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(&a, &b)| a + (b - a) * T::lit(rng.random::<f64>()))
            .collect()
    }

    pub(crate) fn draw_time<R: Rng>(&self, rng: &mut R) -> T {
        self.time_lo + (self.time_hi - self.time_lo) * T::lit(rng.random::<f64>())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KernelReport {
    pub min_eigenvalue: f64,
    pub psd_pass: bool,
    /// `max |q| / (1 + |x|^kappa + |y|^kappa)`; passes when `<= K` and `kappa < 2`.
    pub growth_ratio: f64,
    pub growth_pass: bool,
    pub sup_abs: f64,
    pub bounded_pass: Option<bool>,
    /// `max |q(x,x) - q(x,y)| / |x - y|^gamma`; passes when `<= K`.
    pub holder_ratio: f64,
    pub holder_pass: bool,
    pub max_asymmetry: f64,
    pub violations: Vec<String>,
}

impl KernelReport {
    pub fn all_pass(&self) -> bool {
        self.violations.is_empty()
    }
}

fn norm<T: Real>(x: &[T]) -> T {
    x.iter().map(|v| *v * *v).sum::<T>().sqrt()
}

/// Empirical check of symmetry, positive semidefiniteness, the growth
/// condition, the uniform bound and the Hoelder gap of a kernel.
pub fn validate_kernel<T: Real>(kernel: &CovarianceKernel<T>, probe: &ProbeSpec<T>) -> Result<KernelReport> {
    probe.check()?;
    let mut rng = stream(probe.seed, 0);

    let mut sets: Vec<Vec<Vec<T>>> = (0..probe.n_sets)
        .map(|_| (0..probe.set_size.max(1)).map(|_| probe.draw_point(&mut rng)).collect())
        .collect();
    sets.extend(probe.extra_sets.iter().cloned());
    let mut min_ev = f64::INFINITY;
    for set in &sets {
        let s = probe.draw_time(&mut rng);
        let n = set.len();
        let mut gram = vec![T::zero(); n * n];
        for i in 0..n {
            for j in 0..n {
                gram[i * n + j] = kernel.eval(s, &set[i], &set[j])?;
            }
        }
        let ev = symmetric_eigenvalues(&gram, n);
        min_ev = min_ev.min(ev[0].as_f64());
    }
    if sets.is_empty() {
        min_ev = 0.0;
    }

    let mut growth = 0.0f64;
    let mut sup = 0.0f64;
    let mut holder = 0.0f64;
    let mut asym = 0.0f64;
    for _ in 0..probe.n_pairs {
        let s = probe.draw_time(&mut rng);
        let x = probe.draw_point(&mut rng);
        let y = probe.draw_point(&mut rng);
        let qxy = kernel.eval(s, &x, &y)?.as_f64();
        let qyx = kernel.eval(s, &y, &x)?.as_f64();
        let qxx = kernel.eval(s, &x, &x)?.as_f64();
        asym = asym.max((qxy - qyx).abs());
        sup = sup.max(qxy.abs()).max(qxx.abs());
        let kappa = kernel.kappa.as_f64();
        let denom = 1.0 + norm(&x).as_f64().powf(kappa) + norm(&y).as_f64().powf(kappa);
        growth = growth.max(qxy.abs() / denom).max(qxx.abs() / (1.0 + 2.0 * norm(&x).as_f64().powf(kappa)));
        let r: f64 = x.iter().zip(&y).map(|(a, b)| (a.as_f64() - b.as_f64()).powi(2)).sum::<f64>().sqrt();
        if r > 0.0 {
            holder = holder.max((qxx - qxy).abs() / r.powf(kernel.holder_gamma.as_f64()));
        }
    }

    let eps = probe.eps_psd.as_f64();
    let k = kernel.bound_k.as_f64();
    let slack = 1.0 + 1e-9;
    let psd_pass = min_ev >= -eps;
    let growth_pass = kernel.kappa.as_f64() < 2.0 && growth <= k * slack;
    let bounded_pass = kernel.bound_m.map(|m| sup <= m.as_f64() * slack);
    let holder_pass = holder <= k * slack;

    let mut violations = Vec::new();
    if !psd_pass {
        violations.push(format!("Gram matrix has eigenvalue {min_ev:.3e} < -{eps:.1e}"));
    }
    if !growth_pass {
        violations.push(format!("growth ratio {growth:.4} exceeds K = {k:.4} (kappa {})", kernel.kappa));
    }
    if bounded_pass == Some(false) {
        violations.push(format!("sup |q| = {sup:.4} exceeds declared M"));
    }
    if !holder_pass {
        violations.push(format!("Hoelder ratio {holder:.4} exceeds K = {k:.4}"));
    }
    if asym > 0.0 {
        violations.push(format!("kernel asymmetric by {asym:.3e}"));
    }

    Ok(KernelReport {
        min_eigenvalue: min_ev,
        psd_pass,
        growth_ratio: growth,
        growth_pass,
        sup_abs: sup,
        bounded_pass,
        holder_ratio: holder,
        holder_pass,
        max_asymmetry: asym,
        violations,
    })
}
