use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::coefficients::SdeCoefficients;
use crate::container;
use crate::error::{invalid, Error, Result};
use crate::grid::TimeGrid;
use crate::rng::stream;
use crate::scalar::Real;
use crate::stats::Estimate;

/// Where the paths of a bundle start at `t_0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", bound = "T: Real")]
pub enum InitialState<T> {
    /// Every path starts at the same point.
    Point { x: Vec<T> },
    /// Path `m` starts at `xs[m*d..(m+1)*d]`.
    PerPath { xs: Vec<T> },
}

impl<T: Real> InitialState<T> {
    pub fn point(x: Vec<T>) -> Self {
        Self::Point { x }
    }

    fn get(&self, m: usize, d: usize) -> &[T] {
        match self {
            Self::Point { x } => x,
            Self::PerPath { xs } => &xs[m * d..(m + 1) * d],
        }
    }

    fn check(&self, d: usize, n_paths: usize) -> Result<()> {
        let ok = match self {
            Self::Point { x } => x.len() == d,
            Self::PerPath { xs } => xs.len() == d * n_paths,
        };
        let finite = match self {
            Self::Point { x } => x.iter().all(|v| v.is_finite()),
            Self::PerPath { xs } => xs.iter().all(|v| v.is_finite()),
        };
        if !ok {
            return Err(invalid("initial state does not match dimension and path count"));
        }
        if !finite {
            return Err(invalid("initial state is not finite"));
        }
        Ok(())
    }
}

/// Ensemble of Euler-Maruyama paths with their Brownian increments and,
/// optionally, the first-variation flow. Storage is step-major.
#[derive(Clone, Debug, PartialEq)]
pub struct PathBundle<T> {
    dim: usize,
    n_paths: usize,
    grid: TimeGrid<T>,
    seed: u64,
    initial: InitialState<T>,
    states: Vec<T>,
    dw: Vec<T>,
    flow: Option<Vec<T>>,
}

/// Brownian increments for `n_paths` paths; path `m` draws from stream `m`.
pub fn brownian_increments<T: Real>(grid: &TimeGrid<T>, dim: usize, n_paths: usize, seed: u64) -> Vec<T> {
    let n = grid.steps();
    let sq: Vec<T> = (0..n).map(|k| grid.dt(k).sqrt()).collect();
    let per_path: Vec<Vec<T>> = (0..n_paths)
        .into_par_iter()
        .map(|m| {
            let mut rng = stream(seed, m as u64);
            let mut v = Vec::with_capacity(n * dim);
            for s in &sq {
                for _ in 0..dim {
                    v.push(*s * T::standard_normal(&mut rng));
                }
            }
            v
        })
        .collect();
    let mut dw = vec![T::zero(); n * n_paths * dim];
    for (m, p) in per_path.iter().enumerate() {
        for k in 0..n {
            let at = (k * n_paths + m) * dim;
            dw[at..at + dim].copy_from_slice(&p[k * dim..(k + 1) * dim]);
        }
    }
    dw
}

/// Simulates `n_paths` Euler-Maruyama paths on `grid`.
pub fn simulate<T: Real>(
    coeffs: &SdeCoefficients<T>,
    initial: InitialState<T>,
    grid: &TimeGrid<T>,
    n_paths: usize,
    seed: u64,
    with_flow: bool,
) -> Result<PathBundle<T>> {
    if n_paths == 0 {
        return Err(invalid("a bundle needs at least one path"));
    }
    initial.check(coeffs.dim, n_paths)?;
    let dw = brownian_increments(grid, coeffs.dim, n_paths, seed);
    simulate_with_increments(coeffs, initial, grid, n_paths, dw, seed, with_flow)
}

/// Same scheme driven by caller-supplied increments (step-major, `N*M*d`).
pub fn simulate_with_increments<T: Real>(
    coeffs: &SdeCoefficients<T>,
    initial: InitialState<T>,
    grid: &TimeGrid<T>,
    n_paths: usize,
    dw: Vec<T>,
    seed: u64,
    with_flow: bool,
) -> Result<PathBundle<T>> {
    let d = coeffs.dim;
    let n = grid.steps();
    if n_paths == 0 {
        return Err(invalid("a bundle needs at least one path"));
    }
    if dw.len() != n * n_paths * d {
        return Err(invalid("increment buffer has the wrong length"));
    }
    initial.check(d, n_paths)?;
    let stride = n_paths * d;
    let mut states = vec![T::zero(); (n + 1) * stride];
    for m in 0..n_paths {
        states[m * d..(m + 1) * d].copy_from_slice(initial.get(m, d));
    }
    let fstride = n_paths * d * d;
    let mut flow = with_flow.then(|| {
        let mut f = vec![T::zero(); (n + 1) * fstride];
        for m in 0..n_paths {
            for i in 0..d {
                f[m * d * d + i * d + i] = T::one();
            }
        }
        f
    });

    for k in 0..n {
        let dt = grid.dt(k);
        let (prev, next) = states.split_at_mut((k + 1) * stride);
        let prev = &prev[k * stride..];
        let next = &mut next[..stride];
        let inc = &dw[k * stride..(k + 1) * stride];
        let bad = next
            .par_chunks_mut(d)
            .zip(prev.par_chunks(d))
            .zip(inc.par_chunks(d))
            .map_init(
                || (vec![T::zero(); d], vec![T::zero(); d * d]),
                |(b, s), ((xn, xp), w)| {
                    coeffs.drift_into(xp, b);
                    coeffs.diffusion_into(xp, s);
                    let mut ok = true;
                    for i in 0..d {
                        let mut v = xp[i] + b[i] * dt;
                        for j in 0..d {
                            v += s[i * d + j] * w[j];
                        }
                        ok &= v.is_finite();
                        xn[i] = v;
                    }
                    ok
                },
            )
            .collect::<Vec<bool>>()
            .iter()
            .position(|ok| !ok);
        if let Some(path) = bad {
            return Err(Error::Divergence { step: k + 1, path });
        }
        if let Some(f) = flow.as_mut() {
            let (fp, fnx) = f.split_at_mut((k + 1) * fstride);
            let fp = &fp[k * fstride..];
            let fnx = &mut fnx[..fstride];
            let bad = fnx
                .par_chunks_mut(d * d)
                .zip(fp.par_chunks(d * d))
                .zip(prev.par_chunks(d))
                .zip(inc.par_chunks(d))
                .map_init(
                    || (vec![T::zero(); d * d], vec![T::zero(); d * d]),
                    |(jb, js), (((gn, gp), xp), w)| {
                        coeffs.drift_jacobian_into(xp, jb);
                        // A = I + b' dt + sum_j sigma_j' dW^j, then gn = A gp.
                        let mut a = vec![T::zero(); d * d];
                        for i in 0..d {
                            a[i * d + i] = T::one();
                            for l in 0..d {
                                a[i * d + l] += jb[i * d + l] * dt;
                            }
                        }
                        if !coeffs.is_constant_diffusion() {
                            for (j, wj) in w.iter().enumerate().take(d) {
                                coeffs.diffusion_column_jacobian_into(xp, j, js);
                                for (ai, ji) in a.iter_mut().zip(js.iter()) {
                                    *ai += *ji * *wj;
                                }
                            }
                        }
                        let mut ok = true;
                        for i in 0..d {
                            for l in 0..d {
                                let v = (0..d).map(|r| a[i * d + r] * gp[r * d + l]).sum::<T>();
                                ok &= v.is_finite();
                                gn[i * d + l] = v;
                            }
                        }
                        ok
                    },
                )
                .collect::<Vec<bool>>()
                .iter()
                .position(|ok| !ok);
            if let Some(path) = bad {
                return Err(Error::Divergence { step: k + 1, path });
            }
        }
    }
    Ok(PathBundle { dim: d, n_paths, grid: grid.clone(), seed, initial, states, dw, flow })
}

impl<T: Real> PathBundle<T> {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn grid(&self) -> &TimeGrid<T> {
        &self.grid
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn initial(&self) -> &InitialState<T> {
        &self.initial
    }

    pub fn has_flow(&self) -> bool {
        self.flow.is_some()
    }

    /// States of every path at step `k` (`M*d`, path-major).
    pub fn states_at(&self, k: usize) -> &[T] {
        let s = self.n_paths * self.dim;
        &self.states[k * s..(k + 1) * s]
    }

    pub fn state(&self, k: usize, m: usize) -> &[T] {
        let at = (k * self.n_paths + m) * self.dim;
        &self.states[at..at + self.dim]
    }

    /// Increments `W_{t_{k+1}} - W_{t_k}` for every path.
    pub fn increments_at(&self, k: usize) -> &[T] {
        let s = self.n_paths * self.dim;
        &self.dw[k * s..(k + 1) * s]
    }

    pub fn increment(&self, k: usize, m: usize) -> &[T] {
        let at = (k * self.n_paths + m) * self.dim;
        &self.dw[at..at + self.dim]
    }

    pub fn increments(&self) -> &[T] {
        &self.dw
    }

    /// Flow matrix of path `m` at step `k`, row-major.
    pub fn flow(&self, k: usize, m: usize) -> Option<&[T]> {
        let dd = self.dim * self.dim;
        self.flow.as_ref().map(|f| {
            let at = (k * self.n_paths + m) * dd;
            &f[at..at + dd]
        })
    }

    pub fn terminal_states(&self) -> &[T] {
        self.states_at(self.grid.steps())
    }

    /// Re-simulates from `(t_k, X_k)` with the remaining increments.
    pub fn restart(&self, coeffs: &SdeCoefficients<T>, k: usize) -> Result<PathBundle<T>> {
        let n = self.grid.steps();
        if k >= n {
            return Err(invalid("restart step must precede the last instant"));
        }
        let grid = self.grid.slice(k, n)?;
        let s = self.n_paths * self.dim;
        let dw = self.dw[k * s..].to_vec();
        let initial = InitialState::PerPath { xs: self.states_at(k).to_vec() };
        simulate_with_increments(coeffs, initial, &grid, self.n_paths, dw, self.seed, self.flow.is_some())
    }

    /// Same paths on a grid `factor` times coarser, driven by summed increments.
    pub fn coarsened(&self, coeffs: &SdeCoefficients<T>, factor: usize) -> Result<PathBundle<T>> {
        let n = self.grid.steps();
        if factor == 0 || !n.is_multiple_of(factor) {
            return Err(invalid("coarsening factor must divide the step count"));
        }
        let nc = n / factor;
        let times: Vec<T> = (0..=nc).map(|j| self.grid.time(j * factor)).collect();
        let grid = TimeGrid::new(times)?;
        let s = self.n_paths * self.dim;
        let mut dw = vec![T::zero(); nc * s];
        for j in 0..nc {
            for r in 0..factor {
                let src = &self.dw[(j * factor + r) * s..(j * factor + r + 1) * s];
                for (a, b) in dw[j * s..(j + 1) * s].iter_mut().zip(src) {
                    *a += *b;
                }
            }
        }
        simulate_with_increments(coeffs, self.initial.clone(), &grid, self.n_paths, dw, self.seed, self.flow.is_some())
    }

    /// Per-path CSV: `path,step,t,x_0..,dw_0..`.
    pub fn to_csv(&self, max_paths: usize) -> String {
        let d = self.dim;
        let mut out = String::from("path,step,t");
        for i in 0..d {
            out.push_str(&format!(",x{i}"));
        }
        for i in 0..d {
            out.push_str(&format!(",dw{i}"));
        }
        out.push('\n');
        for m in 0..self.n_paths.min(max_paths) {
            for k in 0..=self.grid.steps() {
                out.push_str(&format!("{m},{k},{}", self.grid.time(k)));
                for v in self.state(k, m) {
                    out.push_str(&format!(",{v}"));
                }
                if k < self.grid.steps() {
                    for v in self.increment(k, m) {
                        out.push_str(&format!(",{v}"));
                    }
                } else {
                    out.push_str(&",".repeat(d));
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = json!({
            "kind": "path_bundle",
            "dim": self.dim,
            "n_paths": self.n_paths,
            "grid": self.grid.times().iter().map(|t| t.as_f64()).collect::<Vec<_>>(),
            "seed": self.seed,
            "initial": serde_json::to_value(&self.initial)?,
            "has_flow": self.flow.is_some(),
        });
        let mut payload: Vec<f64> = self.states.iter().map(|v| v.as_f64()).collect();
        payload.extend(self.dw.iter().map(|v| v.as_f64()));
        if let Some(f) = &self.flow {
            payload.extend(f.iter().map(|v| v.as_f64()));
        }
        container::to_bytes(&header, &payload)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (h, payload) = container::read_container(bytes)?;
        container::expect_kind(&h, "path_bundle")?;
        let field = |k: &str| h.get(k).cloned().ok_or_else(|| Error::Format(format!("missing {k}")));
        let dim: usize = serde_json::from_value(field("dim")?)?;
        let n_paths: usize = serde_json::from_value(field("n_paths")?)?;
        let times: Vec<f64> = serde_json::from_value(field("grid")?)?;
        let seed: u64 = serde_json::from_value(field("seed")?)?;
        let initial: InitialState<T> = serde_json::from_value(field("initial")?)?;
        let has_flow: bool = serde_json::from_value(field("has_flow")?)?;
        let grid = TimeGrid::new(times.into_iter().map(T::lit).collect())?;
        let n = grid.steps();
        let ns = (n + 1) * n_paths * dim;
        let nw = n * n_paths * dim;
        let nf = if has_flow { (n + 1) * n_paths * dim * dim } else { 0 };
        if payload.len() != ns + nw + nf {
            return Err(Error::Format("path bundle payload has the wrong length".into()));
        }
        let conv = |s: &[f64]| s.iter().map(|&v| T::lit(v)).collect::<Vec<T>>();
        Ok(Self {
            dim,
            n_paths,
            grid,
            seed,
            initial,
            states: conv(&payload[..ns]),
            dw: conv(&payload[ns..ns + nw]),
            flow: has_flow.then(|| conv(&payload[ns + nw..])),
        })
    }
}

/// Discounted moment `E int e^{-K' r} |X_r|^{2p} dr` over the bundle's grid,
/// with exact exponential weights on each step and a trapezoid integrand.
pub fn moment_probe<T: Real>(bundle: &PathBundle<T>, p: u32, discount: f64) -> Result<Estimate> {
    if bundle.n_paths == 0 {
        return Err(invalid("empty bundle"));
    }
    if p < 1 || !(discount > 0.0) {
        return Err(invalid("moment probe needs p >= 1 and a positive discount"));
    }
    let g = &bundle.grid;
    let n = g.steps();
    let w: Vec<f64> = (0..n)
        .map(|k| {
            let (a, b) = (g.time(k).as_f64(), g.time(k + 1).as_f64());
            ((-discount * a).exp() - (-discount * b).exp()) / discount
        })
        .collect();
    let samples: Vec<f64> = (0..bundle.n_paths)
        .into_par_iter()
        .map(|m| {
            let h = |k: usize| {
                let r2: f64 = bundle.state(k, m).iter().map(|v| v.as_f64().powi(2)).sum();
                r2.powi(p as i32)
            };
            let mut acc = 0.0;
            let mut hl = h(0);
            for (k, wk) in w.iter().enumerate() {
                let hr = h(k + 1);
                acc += 0.5 * (hl + hr) * wk;
                hl = hr;
            }
            acc
        })
        .collect();
    Ok(Estimate::from_samples(&samples))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frozen_dynamics() {
        let c = SdeCoefficients::constant(2, 0.0, 0.0);
        let g = TimeGrid::uniform(0.0, 1.0, 8).unwrap();
        let b = simulate(&c, InitialState::point(vec![0.3, -1.0]), &g, 5, 1, true).unwrap();
        for k in 0..=8 {
            for m in 0..5 {
                assert_eq!(b.state(k, m), &[0.3, -1.0]);
                assert_eq!(b.flow(k, m).unwrap(), &[1.0, 0.0, 0.0, 1.0]);
            }
        }
    }

    #[test]
    fn deterministic_drift() {
        let c = SdeCoefficients::<f64>::constant(1, 1.0, 0.0);
        let g = TimeGrid::uniform(0.0, 1.0, 10).unwrap();
        let b = simulate(&c, InitialState::point(vec![0.0]), &g, 3, 1, false).unwrap();
        for m in 0..3 {
            assert!((b.state(10, m)[0] - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn deterministic_moment() {
        let c = SdeCoefficients::constant(1, 0.0, 0.0);
        let g = TimeGrid::uniform(0.0, 2.0, 16).unwrap();
        let b = simulate(&c, InitialState::point(vec![1.0]), &g, 2, 1, false).unwrap();
        let e = moment_probe(&b, 1, 1.0).unwrap();
        assert!((e.mean - (1.0 - (-2.0f64).exp())).abs() < 1e-14);
        let z = simulate(&c, InitialState::point(vec![0.0]), &g, 2, 1, false).unwrap();
        assert_eq!(moment_probe(&z, 1, 1.0).unwrap().mean, 0.0);
        assert!(moment_probe(&z, 0, 1.0).is_err());
        assert!(moment_probe(&z, 1, 0.0).is_err());
    }

    #[test]
    fn divergence_is_reported() {
        let c = SdeCoefficients::ornstein_uhlenbeck(1, -1e200, 0.0);
        let g = TimeGrid::uniform(0.0, 1.0, 4).unwrap();
        match simulate(&c, InitialState::point(vec![1e200]), &g, 2, 1, false) {
            Err(Error::Divergence { step: 1, path: 0 }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn reproducible_and_round_trips() {
        let c = SdeCoefficients::ornstein_uhlenbeck(2, 1.0, 0.5);
        let g = TimeGrid::uniform(0.0, 1.0, 6).unwrap();
        let a = simulate(&c, InitialState::point(vec![0.0, 1.0]), &g, 7, 42, true).unwrap();
        let b = simulate(&c, InitialState::point(vec![0.0, 1.0]), &g, 7, 42, true).unwrap();
        assert_eq!(a, b);
        let back = PathBundle::<f64>::from_bytes(&a.to_bytes().unwrap()).unwrap();
        assert_eq!(a, back);
        assert!(a.to_csv(2).lines().count() == 1 + 2 * 7);
    }

    #[test]
    fn zero_paths_rejected() {
        let c = SdeCoefficients::<f64>::brownian(1);
        let g = TimeGrid::uniform(0.0, 1.0, 2).unwrap();
        assert!(simulate(&c, InitialState::point(vec![0.0]), &g, 0, 1, false).is_err());
    }
}
