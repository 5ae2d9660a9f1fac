use rayon::prelude::*;

use super::basis::{BasisKind, Design, Surface};
use super::driver::Driver;
use super::solver::{step_data, BackwardSolution};
use super::terminal::TerminalCondition;
use crate::error::{Error, Result};
use crate::forward_sde::{PathBundle, SdeCoefficients};
use crate::kunita_calculus::NoiseIntegrator;
use crate::noise_field::FieldRealization;
use crate::scalar::Real;

/// `Z` recovered from the first-variation flow, and from the gradient of the
/// value surfaces, alongside the regression `Z` of the solution.
pub struct VariationalZ<T> {
    dim: usize,
    n_paths: usize,
    /// Surface of `grad u(t_k, .)` per step, `d` outputs.
    gradient_surfaces: Vec<Surface<T>>,
    /// `grad Y_k (grad X_k)^{-1} sigma(X_k)` per step and path (`N*M*d`).
    flow_z: Vec<T>,
}

fn invert<T: Real>(a: &[T], d: usize) -> Option<Vec<T>> {
    let mut m = a.to_vec();
    let mut inv = vec![T::zero(); d * d];
    for i in 0..d {
        inv[i * d + i] = T::one();
    }
    let scale = a.iter().fold(T::zero(), |s, v| s.max(v.abs()));
    for c in 0..d {
        let piv = (c..d).max_by(|&i, &j| m[i * d + c].abs().partial_cmp(&m[j * d + c].abs()).unwrap())?;
        if m[piv * d + c].abs() <= T::epsilon() * T::lit(1e3) * scale {
            return None;
        }
        for j in 0..d {
            m.swap(c * d + j, piv * d + j);
            inv.swap(c * d + j, piv * d + j);
        }
        let p = m[c * d + c];
        for j in 0..d {
            m[c * d + j] /= p;
            inv[c * d + j] /= p;
        }
        for r in 0..d {
            if r != c {
                let f = m[r * d + c];
                for j in 0..d {
                    let (mc, ic) = (m[c * d + j], inv[c * d + j]);
                    m[r * d + j] -= f * mc;
                    inv[r * d + j] -= f * ic;
                }
            }
        }
    }
    Some(inv)
}

/// Solves the linearized backward equation for `D_k = grad Y_k (grad X_k)^{-1}`
/// along the bundle's flow. With `A_k = grad X_{k+1} (grad X_k)^{-1}`,
/// `D_k = E_k[(1 + f_y dt + g_y dB) D_{k+1} A_k + (f_x dt + g_x dB) A_k + (f_z dt + g_z dB) H_k]`
/// where `H_k` is the regression estimate of `grad_x Z`.
///
/// The field has no spatial derivative at the sampled points, so a
/// non-zero `g` requires a kernel constant in space.
#[allow(clippy::too_many_arguments)]
pub fn variational_z<T: Real>(
    solution: &BackwardSolution<T>,
    bundle: &PathBundle<T>,
    coeffs: &SdeCoefficients<T>,
    driver: &Driver,
    terminal: &TerminalCondition,
    real: &FieldRealization<T>,
    basis: BasisKind,
    noise: NoiseIntegrator,
) -> Result<VariationalZ<T>> {
    if !bundle.has_flow() {
        return Err(Error::Precondition("variational Z needs a bundle simulated with its flow".into()));
    }
    if !driver.g.is_zero() && !matches!(real.kernel().family, crate::noise_field::KernelFamily::Constant { .. }) {
        return Err(Error::Precondition(
            "variational Z with noise needs a spatially constant kernel (no field gradient available)".into(),
        ));
    }
    if solution.realization_id() != real.id() {
        return Err(Error::ContractViolation("solution and realization ids differ".into()));
    }
    let sd = step_data(real, bundle)?;
    let grid = bundle.grid();
    let n = grid.steps();
    let m = bundle.n_paths();
    let d = bundle.dim();
    let dd = d * d;
    // A_k per step and path.
    let mut jumps = vec![T::zero(); n * m * dd];
    for k in 0..n {
        let rows: Vec<Vec<T>> = (0..m)
            .into_par_iter()
            .map(|p| {
                let inv = invert(bundle.flow(k, p).expect("flow"), d)
                    .ok_or_else(|| Error::Conditioning(format!("singular flow at step {k}, path {p}")))?;
                let next = bundle.flow(k + 1, p).expect("flow");
                let mut a = vec![T::zero(); dd];
                for i in 0..d {
                    for j in 0..d {
                        a[i * d + j] = (0..d).map(|r| next[i * d + r] * inv[r * d + j]).sum();
                    }
                }
                Ok(a)
            })
            .collect::<Result<_>>()?;
        for (p, a) in rows.into_iter().enumerate() {
            jumps[(k * m + p) * dd..(k * m + p + 1) * dd].copy_from_slice(&a);
        }
    }

    let mut dnext: Vec<T> = bundle
        .terminal_states()
        .par_chunks(d)
        .flat_map_iter(|x| {
            let mut g = vec![T::zero(); d];
            terminal.gradient(x, &mut g);
            g
        })
        .collect();
    let needs_h = driver.f.depends_on_z() || driver.g.depends_on_z();
    let mut gradient_surfaces = Vec::with_capacity(n);
    let mut flow_z = vec![T::zero(); n * m * d];
    for k in (0..n).rev() {
        let (t1, dt) = (grid.time(k + 1), grid.dt(k));
        let xs0 = bundle.states_at(k);
        let xs1 = bundle.states_at(k + 1);
        let ys1 = solution.y_at(k + 1);
        let zs = solution.z_at(k);
        let design = Design::new(basis, xs0, d, k)?;
        // Transported derivative D_{k+1} A_k.
        let moved: Vec<T> = (0..m)
            .into_par_iter()
            .flat_map_iter(|p| {
                let a = &jumps[(k * m + p) * dd..(k * m + p + 1) * dd];
                let dn = &dnext[p * d..(p + 1) * d];
                (0..d).map(move |i| (0..d).map(|l| dn[l] * a[l * d + i]).sum::<T>())
            })
            .collect();
        // H_k[j][i] = d Z_j / d x_i from (moved - fitted) dW_j / dt.
        let h = if needs_h {
            let cols: Vec<Vec<T>> = (0..d).map(|i| (0..m).map(|p| moved[p * d + i]).collect()).collect();
            let refs: Vec<&[T]> = cols.iter().map(|c| c.as_slice()).collect();
            let c0 = design.fit(&refs)?;
            let fitted: Vec<Vec<T>> = (0..d).map(|i| design.fitted(&c0, d, i)).collect();
            let dw = bundle.increments_at(k);
            let mut targets = Vec::with_capacity(dd);
            for j in 0..d {
                for i in 0..d {
                    targets.push((0..m).map(|p| (cols[i][p] - fitted[i][p]) * dw[p * d + j] / dt).collect::<Vec<T>>());
                }
            }
            let refs: Vec<&[T]> = targets.iter().map(|c| c.as_slice()).collect();
            let ch = design.fit(&refs)?;
            let mut h = vec![T::zero(); m * dd];
            for r in 0..dd {
                for (p, v) in design.fitted(&ch, dd, r).into_iter().enumerate() {
                    h[p * dd + r] = v;
                }
            }
            Some(h)
        } else {
            None
        };
        let db = &sd.db[k * m..(k + 1) * m];
        let dq = &sd.dq[k * m..(k + 1) * m];
        let targets: Vec<T> = (0..m)
            .into_par_iter()
            .flat_map_iter(|p| {
                let x1 = &xs1[p * d..(p + 1) * d];
                let z = &zs[p * d..(p + 1) * d];
                let fp = driver.f.partials(t1, x1, ys1[p], z);
                let gp = driver.g.partials(t1, x1, ys1[p], z);
                let a = &jumps[(k * m + p) * dd..(k * m + p + 1) * dd];
                let mv = &moved[p * d..(p + 1) * d];
                let hp = h.as_ref().map(|h| &h[p * dd..(p + 1) * dd]);
                let gy = gp.dy;
                let lin = |c: T| noise.step(c, gy, db[p], dq[p]);
                let factor = T::one() + fp.dy * dt + lin(gy);
                (0..d)
                    .map(|i| {
                        let mut v = factor * mv[i];
                        for l in 0..d {
                            v += (fp.dx[l] * dt + lin(gp.dx[l])) * a[l * d + i];
                        }
                        if let Some(hp) = hp {
                            for j in 0..d {
                                v += (fp.dz[j] * dt + lin(gp.dz[j])) * hp[j * d + i];
                            }
                        }
                        v
                    })
                    .collect::<Vec<T>>()
            })
            .collect();
        let cols: Vec<Vec<T>> = (0..d).map(|i| (0..m).map(|p| targets[p * d + i]).collect()).collect();
        let refs: Vec<&[T]> = cols.iter().map(|c| c.as_slice()).collect();
        let c = design.fit(&refs)?;
        let dk: Vec<Vec<T>> = (0..d).map(|i| design.fitted(&c, d, i)).collect();
        let mut dcur = vec![T::zero(); m * d];
        for i in 0..d {
            for p in 0..m {
                dcur[p * d + i] = dk[i][p];
            }
        }
        let fz: Vec<T> = (0..m)
            .into_par_iter()
            .flat_map_iter(|p| {
                let mut s = vec![T::zero(); dd];
                coeffs.diffusion_into(&xs0[p * d..(p + 1) * d], &mut s);
                let dp = &dcur[p * d..(p + 1) * d];
                (0..d).map(move |j| (0..d).map(|i| dp[i] * s[i * d + j]).sum::<T>()).collect::<Vec<T>>()
            })
            .collect();
        flow_z[k * m * d..(k + 1) * m * d].copy_from_slice(&fz);
        gradient_surfaces.push(design.surface(c, d));
        dnext = dcur;
    }
    gradient_surfaces.reverse();
    Ok(VariationalZ { dim: d, n_paths: m, gradient_surfaces, flow_z })
}

impl<T: Real> VariationalZ<T> {
    pub fn flow_z_at(&self, k: usize) -> &[T] {
        let s = self.n_paths * self.dim;
        &self.flow_z[k * s..(k + 1) * s]
    }

    /// `grad u(t_k, x) sigma(x)` from the linearized equation.
    pub fn flow_z_surface(&self, k: usize, x: &[T], coeffs: &SdeCoefficients<T>, out: &mut [T]) {
        let d = self.dim;
        let grad: Vec<T> = (0..d).map(|i| self.gradient_surfaces[k].eval(i, x)).collect();
        let mut s = vec![T::zero(); d * d];
        coeffs.diffusion_into(x, &mut s);
        for j in 0..d {
            out[j] = (0..d).map(|i| grad[i] * s[i * d + j]).sum();
        }
    }
}

/// `grad u(t_k, x) sigma(x)` by differentiating the value surface.
pub fn surface_z<T: Real>(solution: &BackwardSolution<T>, k: usize, x: &[T], coeffs: &SdeCoefficients<T>, out: &mut [T]) {
    let d = solution.dim();
    let mut grad = vec![T::zero(); d];
    solution.grad_u(k, x, &mut grad);
    let mut s = vec![T::zero(); d * d];
    coeffs.diffusion_into(x, &mut s);
    for j in 0..d {
        out[j] = (0..d).map(|i| grad[i] * s[i * d + j]).sum();
    }
}
