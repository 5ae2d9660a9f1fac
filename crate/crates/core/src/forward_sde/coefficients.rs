use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng::stream;
use crate::scalar::Real;

/// Closed registry of drift families `b: R^d -> R^d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", bound = "T: Real")]
pub enum DriftFamily<T> {
    Zero,
    Constant { value: Vec<T> },
    /// `b(x) = A x + c`, `A` row-major.
    Linear { matrix: Vec<T>, offset: Vec<T> },
    /// `b_i(x) = base_i + slope_i * tanh(x_i)`.
    Tanh { base: Vec<T>, slope: Vec<T> },
}

/// Closed registry of diffusion families `sigma: R^d -> R^{d x d}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", bound = "T: Real")]
pub enum DiffusionFamily<T> {
    /// Constant matrix, row-major.
    Constant { matrix: Vec<T> },
    /// Diagonal `sigma_ii(x) = base_i + slope_i * x_i`.
    Linear { base: Vec<T>, slope: Vec<T> },
    /// Diagonal `sigma_ii(x) = base_i + slope_i * tanh(x_i)`.
    Tanh { base: Vec<T>, slope: Vec<T> },
}

/// Coefficients of `dX = b(X) ds + sigma(X) dW` with analytic Jacobians.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct SdeCoefficients<T> {
    pub dim: usize,
    pub drift: DriftFamily<T>,
    pub diffusion: DiffusionFamily<T>,
    /// Global Lipschitz constant of `b` and `sigma` together.
    pub lipschitz_k: T,
    pub bounded: bool,
}

#[inline]
fn sech2<T: Real>(x: T) -> T {
    let t = x.tanh();
    T::one() - t * t
}

impl<T: Real> SdeCoefficients<T> {
    pub fn new(dim: usize, drift: DriftFamily<T>, diffusion: DiffusionFamily<T>) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("dimension must be positive"));
        }
        let vec_ok = |v: &Vec<T>| v.len() == dim;
        let ok = match &drift {
            DriftFamily::Zero => true,
            DriftFamily::Constant { value } => vec_ok(value),
            DriftFamily::Linear { matrix, offset } => matrix.len() == dim * dim && vec_ok(offset),
            DriftFamily::Tanh { base, slope } => vec_ok(base) && vec_ok(slope),
        } && match &diffusion {
            DiffusionFamily::Constant { matrix } => matrix.len() == dim * dim,
            DiffusionFamily::Linear { base, slope } | DiffusionFamily::Tanh { base, slope } => {
                vec_ok(base) && vec_ok(slope)
            }
        };
        if !ok {
            return Err(invalid("coefficient parameters do not match the dimension"));
        }
        let max_abs = |v: &[T]| v.iter().fold(T::zero(), |m, x| m.max(x.abs()));
        let kb = match &drift {
            DriftFamily::Zero | DriftFamily::Constant { .. } => T::zero(),
            DriftFamily::Linear { matrix, .. } => matrix.iter().map(|a| *a * *a).sum::<T>().sqrt(),
            DriftFamily::Tanh { slope, .. } => max_abs(slope),
        };
        let ks = match &diffusion {
            DiffusionFamily::Constant { .. } => T::zero(),
            DiffusionFamily::Linear { slope, .. } | DiffusionFamily::Tanh { slope, .. } => max_abs(slope),
        };
        let bounded = !matches!(drift, DriftFamily::Linear { .. })
            && !matches!(diffusion, DiffusionFamily::Linear { .. });
        Ok(Self { dim, drift, diffusion, lipschitz_k: kb + ks, bounded })
    }

    /// `b = 0`, `sigma = I`.
    pub fn brownian(dim: usize) -> Self {
        let mut eye = vec![T::zero(); dim * dim];
        for i in 0..dim {
            eye[i * dim + i] = T::one();
        }
        Self::new(dim, DriftFamily::Zero, DiffusionFamily::Constant { matrix: eye }).expect("valid")
    }

    /// `b = c`, `sigma = s I` for scalars `c`, `s`.
    pub fn constant(dim: usize, drift: T, sigma: T) -> Self {
        let mut m = vec![T::zero(); dim * dim];
        for i in 0..dim {
            m[i * dim + i] = sigma;
        }
        Self::new(dim, DriftFamily::Constant { value: vec![drift; dim] }, DiffusionFamily::Constant { matrix: m })
            .expect("valid")
    }

    /// Ornstein-Uhlenbeck `b(x) = -theta x`, `sigma = s I`.
    pub fn ornstein_uhlenbeck(dim: usize, theta: T, sigma: T) -> Self {
        let mut a = vec![T::zero(); dim * dim];
        let mut m = vec![T::zero(); dim * dim];
        for i in 0..dim {
            a[i * dim + i] = -theta;
            m[i * dim + i] = sigma;
        }
        Self::new(
            dim,
            DriftFamily::Linear { matrix: a, offset: vec![T::zero(); dim] },
            DiffusionFamily::Constant { matrix: m },
        )
        .expect("valid")
    }

    pub fn drift_into(&self, x: &[T], out: &mut [T]) {
        let d = self.dim;
        match &self.drift {
            DriftFamily::Zero => out.iter_mut().for_each(|o| *o = T::zero()),
            DriftFamily::Constant { value } => out.copy_from_slice(value),
            DriftFamily::Linear { matrix, offset } => {
                for i in 0..d {
                    out[i] = offset[i] + (0..d).map(|j| matrix[i * d + j] * x[j]).sum::<T>();
                }
            }
            DriftFamily::Tanh { base, slope } => {
                for i in 0..d {
                    out[i] = base[i] + slope[i] * x[i].tanh();
                }
            }
        }
    }

    /// `sigma(x)` into a row-major `d x d` buffer.
    pub fn diffusion_into(&self, x: &[T], out: &mut [T]) {
        let d = self.dim;
        match &self.diffusion {
            DiffusionFamily::Constant { matrix } => out.copy_from_slice(matrix),
            DiffusionFamily::Linear { base, slope } => {
                out.iter_mut().for_each(|o| *o = T::zero());
                for i in 0..d {
                    out[i * d + i] = base[i] + slope[i] * x[i];
                }
            }
            DiffusionFamily::Tanh { base, slope } => {
                out.iter_mut().for_each(|o| *o = T::zero());
                for i in 0..d {
                    out[i * d + i] = base[i] + slope[i] * x[i].tanh();
                }
            }
        }
    }

    /// Jacobian `b'(x)`, row-major `d x d`.
    pub fn drift_jacobian_into(&self, x: &[T], out: &mut [T]) {
        let d = self.dim;
        out.iter_mut().for_each(|o| *o = T::zero());
        match &self.drift {
            DriftFamily::Zero | DriftFamily::Constant { .. } => {}
            DriftFamily::Linear { matrix, .. } => out.copy_from_slice(matrix),
            DriftFamily::Tanh { slope, .. } => {
                for i in 0..d {
                    out[i * d + i] = slope[i] * sech2(x[i]);
                }
            }
        }
    }

    /// Jacobian of the `j`-th column of `sigma`: `out[i][l] = d sigma_ij / d x_l`.
    pub fn diffusion_column_jacobian_into(&self, x: &[T], j: usize, out: &mut [T]) {
        let d = self.dim;
        out.iter_mut().for_each(|o| *o = T::zero());
        match &self.diffusion {
            DiffusionFamily::Constant { .. } => {}
            DiffusionFamily::Linear { slope, .. } => out[j * d + j] = slope[j],
            DiffusionFamily::Tanh { slope, .. } => out[j * d + j] = slope[j] * sech2(x[j]),
        }
    }

    pub fn is_constant_diffusion(&self) -> bool {
        matches!(self.diffusion, DiffusionFamily::Constant { .. })
    }

    pub fn is_zero_drift(&self) -> bool {
        matches!(self.drift, DriftFamily::Zero)
    }

    /// Largest `sigma_ii` over a box (used to size finite-difference domains).
    pub fn diffusion_scale_bound(&self, radius: T) -> T {
        let max_abs = |v: &[T]| v.iter().fold(T::zero(), |m, x| m.max(x.abs()));
        match &self.diffusion {
            DiffusionFamily::Constant { matrix } => max_abs(matrix),
            DiffusionFamily::Linear { base, slope } => max_abs(base) + max_abs(slope) * radius,
            DiffusionFamily::Tanh { base, slope } => max_abs(base) + max_abs(slope),
        }
    }
}

/// Empirical check of the coefficient invariants on random probe points.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CoefficientReport {
    /// `max (|b(x)-b(y)| + |sigma(x)-sigma(y)|_F) / |x-y|`
    pub lipschitz_ratio: f64,
    pub lipschitz_pass: bool,
    /// Max abs difference between analytic Jacobians and centered differences.
    pub jacobian_error: f64,
    pub jacobian_pass: bool,
    pub sup_norm: f64,
}

pub fn check_coefficients<T: Real>(
    coeffs: &SdeCoefficients<T>,
    lower: T,
    upper: T,
    n_probe: usize,
    seed: u64,
) -> CoefficientReport {
    let d = coeffs.dim;
    let mut rng = stream(seed, 0);
    let draw = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
        (0..d).map(|_| lower.as_f64() + (upper - lower).as_f64() * rng.random::<f64>()).collect()
    };
    let to_t = |v: &[f64]| v.iter().map(|&a| T::lit(a)).collect::<Vec<T>>();
    let (mut bx, mut by) = (vec![T::zero(); d], vec![T::zero(); d]);
    let (mut sx, mut sy) = (vec![T::zero(); d * d], vec![T::zero(); d * d]);
    let mut lip = 0.0f64;
    let mut jac_err = 0.0f64;
    let mut sup = 0.0f64;
    let h = 1e-5;
    let mut jac = vec![T::zero(); d * d];
    for _ in 0..n_probe {
        let x = draw(&mut rng);
        let y = draw(&mut rng);
        let (xt, yt) = (to_t(&x), to_t(&y));
        coeffs.drift_into(&xt, &mut bx);
        coeffs.drift_into(&yt, &mut by);
        coeffs.diffusion_into(&xt, &mut sx);
        coeffs.diffusion_into(&yt, &mut sy);
        let db: f64 = bx.iter().zip(&by).map(|(a, b)| (*a - *b).as_f64().powi(2)).sum::<f64>().sqrt();
        let ds: f64 = sx.iter().zip(&sy).map(|(a, b)| (*a - *b).as_f64().powi(2)).sum::<f64>().sqrt();
        let r: f64 = x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        if r > 0.0 {
            lip = lip.max((db + ds) / r);
        }
        sup = sup
            .max(bx.iter().map(|v| v.as_f64().abs()).fold(0.0, f64::max))
            .max(sx.iter().map(|v| v.as_f64().abs()).fold(0.0, f64::max));

        coeffs.drift_jacobian_into(&xt, &mut jac);
        for l in 0..d {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[l] += h;
            xm[l] -= h;
            coeffs.drift_into(&to_t(&xp), &mut bx);
            coeffs.drift_into(&to_t(&xm), &mut by);
            for i in 0..d {
                let fd = (bx[i] - by[i]).as_f64() / (2.0 * h);
                jac_err = jac_err.max((fd - jac[i * d + l].as_f64()).abs());
            }
        }
        for j in 0..d {
            coeffs.diffusion_column_jacobian_into(&xt, j, &mut jac);
            for l in 0..d {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[l] += h;
                xm[l] -= h;
                coeffs.diffusion_into(&to_t(&xp), &mut sx);
                coeffs.diffusion_into(&to_t(&xm), &mut sy);
                for i in 0..d {
                    let fd = (sx[i * d + j] - sy[i * d + j]).as_f64() / (2.0 * h);
                    jac_err = jac_err.max((fd - jac[i * d + l].as_f64()).abs());
                }
            }
        }
    }
    CoefficientReport {
        lipschitz_ratio: lip,
        lipschitz_pass: lip <= coeffs.lipschitz_k.as_f64() * (1.0 + 1e-9) + 1e-12,
        jacobian_error: jac_err,
        jacobian_pass: jac_err <= 1e-5,
        sup_norm: sup,
    }
}
