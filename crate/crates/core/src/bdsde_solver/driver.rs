use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

use crate::error::{invalid, Result};
use crate::noise_field::CovarianceKernel;
use crate::rng::stream;
use crate::scalar::Real;

/// Time factor multiplying a driver term.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum TimeShape {
    One,
    /// `sin(2 pi t / period + phase)`
    Sin { period: f64, phase: f64 },
    /// `cos(2 pi t / period + phase)`
    Cos { period: f64, phase: f64 },
}

impl TimeShape {
    #[inline]
    pub fn eval<T: Real>(&self, t: T) -> T {
        match *self {
            Self::One => T::one(),
            Self::Sin { period, phase } => (T::lit(TAU / period) * t + T::lit(phase)).sin(),
            Self::Cos { period, phase } => (T::lit(TAU / period) * t + T::lit(phase)).cos(),
        }
    }

    pub fn sup(&self) -> f64 {
        1.0
    }

    pub fn period(&self) -> Option<f64> {
        match *self {
            Self::One => None,
            Self::Sin { period, .. } | Self::Cos { period, .. } => Some(period),
        }
    }
}

/// What a driver term depends on.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TermKind {
    Const,
    Y,
    Z { index: usize },
    X { index: usize },
    SinY,
    CosY,
    TanhY,
    SinZ { index: usize },
    SinX { index: usize },
}

/// `coeff * shape(t) * kind(x, y, z)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriverTerm {
    pub coeff: f64,
    #[serde(default = "one_shape")]
    pub time: TimeShape,
    #[serde(flatten)]
    pub kind: TermKind,
}

fn one_shape() -> TimeShape {
    TimeShape::One
}

impl DriverTerm {
    pub fn new(coeff: f64, kind: TermKind) -> Self {
        Self { coeff, time: TimeShape::One, kind }
    }

    pub fn timed(coeff: f64, time: TimeShape, kind: TermKind) -> Self {
        Self { coeff, time, kind }
    }
}

/// Partial derivatives of a driver function at one argument tuple.
#[derive(Clone, Debug, PartialEq)]
pub struct Partials<T> {
    pub value: T,
    pub dy: T,
    pub dz: Vec<T>,
    pub dx: Vec<T>,
}

/// A driver function `(t, x, y, z) -> R` as a sum of registry terms.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DriverFn {
    pub terms: Vec<DriverTerm>,
}

impl DriverFn {
    pub fn zero() -> Self {
        Self { terms: Vec::new() }
    }

    pub fn new(terms: Vec<DriverTerm>) -> Self {
        Self { terms }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.iter().all(|t| t.coeff == 0.0)
    }

    pub fn depends_on_z(&self) -> bool {
        self.terms.iter().any(|t| matches!(t.kind, TermKind::Z { .. } | TermKind::SinZ { .. }) && t.coeff != 0.0)
    }

    pub fn depends_on_y(&self) -> bool {
        self.terms
            .iter()
            .any(|t| matches!(t.kind, TermKind::Y | TermKind::SinY | TermKind::CosY | TermKind::TanhY) && t.coeff != 0.0)
    }

    /// Affine in `y` with no `z`, `x`-dependence only through additive terms.
    pub fn is_affine_in_y(&self) -> bool {
        self.terms.iter().all(|t| !matches!(t.kind, TermKind::SinY | TermKind::CosY | TermKind::TanhY))
            && !self.depends_on_z()
    }

    pub fn is_time_dependent(&self) -> bool {
        self.terms.iter().any(|t| t.time != TimeShape::One && t.coeff != 0.0)
    }

    pub fn max_index(&self) -> Option<usize> {
        self.terms
            .iter()
            .filter_map(|t| match t.kind {
                TermKind::Z { index } | TermKind::X { index } | TermKind::SinZ { index } | TermKind::SinX { index } => {
                    Some(index)
                }
                _ => None,
            })
            .max()
    }

    #[inline]
    pub fn eval<T: Real>(&self, t: T, x: &[T], y: T, z: &[T]) -> T {
        let mut acc = T::zero();
        for term in &self.terms {
            let c = T::lit(term.coeff) * term.time.eval(t);
            let v = match term.kind {
                TermKind::Const => T::one(),
                TermKind::Y => y,
                TermKind::Z { index } => z[index],
                TermKind::X { index } => x[index],
                TermKind::SinY => y.sin(),
                TermKind::CosY => y.cos(),
                TermKind::TanhY => y.tanh(),
                TermKind::SinZ { index } => z[index].sin(),
                TermKind::SinX { index } => x[index].sin(),
            };
            acc += c * v;
        }
        acc
    }

    /// `d/dy` only; the common case inside the backward step.
    #[inline]
    pub fn dy<T: Real>(&self, t: T, y: T) -> T {
        let mut acc = T::zero();
        for term in &self.terms {
            let c = T::lit(term.coeff) * term.time.eval(t);
            acc += c * match term.kind {
                TermKind::Y => T::one(),
                TermKind::SinY => y.cos(),
                TermKind::CosY => -y.sin(),
                TermKind::TanhY => {
                    let h = y.tanh();
                    T::one() - h * h
                }
                _ => T::zero(),
            };
        }
        acc
    }

    pub fn partials<T: Real>(&self, t: T, x: &[T], y: T, z: &[T]) -> Partials<T> {
        let mut p = Partials { value: self.eval(t, x, y, z), dy: self.dy(t, y), dz: vec![T::zero(); z.len()], dx: vec![T::zero(); x.len()] };
        for term in &self.terms {
            let c = T::lit(term.coeff) * term.time.eval(t);
            match term.kind {
                TermKind::Z { index } => p.dz[index] += c,
                TermKind::SinZ { index } => p.dz[index] += c * z[index].cos(),
                TermKind::X { index } => p.dx[index] += c,
                TermKind::SinX { index } => p.dx[index] += c * x[index].cos(),
                _ => {}
            }
        }
        p
    }

    /// Sup-norm Lipschitz constants in `(x, y, z)` (each summed over terms).
    fn lipschitz_parts(&self) -> (f64, f64, f64) {
        let (mut lx, mut ly, mut lz) = (0.0, 0.0, 0.0);
        for t in &self.terms {
            let c = t.coeff.abs() * t.time.sup();
            match t.kind {
                TermKind::Const => {}
                TermKind::Y | TermKind::SinY | TermKind::CosY | TermKind::TanhY => ly += c,
                TermKind::Z { .. } | TermKind::SinZ { .. } => lz += c,
                TermKind::X { .. } | TermKind::SinX { .. } => lx += c,
            }
        }
        (lx, ly, lz)
    }

    /// Largest `d f / d y` over all arguments (for the monotonicity constant).
    fn sup_dy(&self) -> f64 {
        self.terms
            .iter()
            .map(|t| match (t.kind, t.time) {
                (TermKind::Y, TimeShape::One) => t.coeff,
                (TermKind::Y, _) => t.coeff.abs(),
                (TermKind::SinY | TermKind::CosY | TermKind::TanhY, _) => t.coeff.abs(),
                _ => 0.0,
            })
            .sum()
    }

    fn common_period(&self) -> Option<Option<f64>> {
        let periods: Vec<f64> =
            self.terms.iter().filter(|t| t.coeff != 0.0).filter_map(|t| t.time.period()).collect();
        match periods.first() {
            None => Some(None),
            Some(&p) if periods.iter().all(|q| (q - p).abs() <= 1e-12 * p.abs()) => Some(Some(p)),
            _ => None,
        }
    }
}

/// The pair `(f, g)` with the Lipschitz, growth, monotonicity and
/// periodicity constants the theory attaches to it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Driver {
    pub f: DriverFn,
    pub g: DriverFn,
    /// `|f(y1,z1)-f(y2,z2)|^2 <= K(|dx|^2+|dy|^2+|dz|^2)` and the matching
    /// `y`/`x` part of the bound on `g`.
    pub lipschitz_k: f64,
    /// Squared `z`-Lipschitz constant of `g` (the profile `alpha_t(x)`).
    pub alpha_profile: f64,
    /// Bound on `alpha_profile * q(t, x, x)`; must lie below one.
    pub alpha: f64,
    /// Growth exponent of `g` in `y`.
    pub growth_gamma: f64,
    /// Monotonicity constant of `f` in `y`, when `f` is strictly decreasing.
    pub mu: Option<f64>,
    /// Common period of the time factors, `None` for time-independent drivers.
    pub tau: Option<f64>,
}

impl Driver {
    /// Derives every constant from the term registry; `q_bound` is the
    /// kernel's uniform bound on `q(t, x, x)`.
    pub fn new(f: DriverFn, g: DriverFn, q_bound: f64) -> Result<Self> {
        let (fx, fy, fz) = f.lipschitz_parts();
        let (gx, gy, gz) = g.lipschitz_parts();
        let kf = fx * fx + fy * fy + fz * fz;
        // (a + b)^2 <= 2a^2 + 2b^2 when g mixes y/x and z; exact otherwise.
        let mixed = gz > 0.0 && (gx > 0.0 || gy > 0.0);
        let split = if mixed { 2.0 } else { 1.0 };
        let kg = split * (gx * gx + gy * gy);
        let alpha_profile = split * gz * gz;
        let sup_dy = f.sup_dy();
        let mu = (f.depends_on_y() && sup_dy < 0.0).then_some(-sup_dy);
        let tau = match (f.common_period(), g.common_period()) {
            (Some(a), Some(b)) => match (a, b) {
                (None, None) => None,
                (Some(p), None) | (None, Some(p)) => Some(p),
                (Some(p), Some(q)) if (p - q).abs() <= 1e-12 * p => Some(p),
                _ => None,
            },
            _ => None,
        };
        let bounded_g = !g.terms.iter().any(|t| matches!(t.kind, TermKind::Y | TermKind::Z { .. } | TermKind::X { .. }) && t.coeff != 0.0);
        Ok(Self {
            f,
            g,
            lipschitz_k: kf.max(kg),
            alpha_profile,
            alpha: if alpha_profile == 0.0 { 0.0 } else { alpha_profile * q_bound },
            growth_gamma: if bounded_g { 0.5 } else { 1.0 },
            mu,
            tau,
        })
    }

    pub fn for_kernel<T: Real>(f: DriverFn, g: DriverFn, kernel: &CovarianceKernel<T>) -> Result<Self> {
        Self::new(f, g, kernel.bound_m.map(|m| m.as_f64()).unwrap_or(f64::INFINITY))
    }

    pub fn is_time_independent(&self) -> bool {
        !self.f.is_time_dependent() && !self.g.is_time_dependent()
    }

    /// `2 mu - K' - K/(1-alpha) - K M`, or `-inf` without monotonicity.
    pub fn monotonicity_margin(&self, discount: f64, q_bound: f64) -> f64 {
        match self.mu {
            Some(mu) if self.alpha < 1.0 => {
                2.0 * mu - discount - self.lipschitz_k / (1.0 - self.alpha) - self.lipschitz_k * q_bound
            }
            _ => f64::NEG_INFINITY,
        }
    }

    pub fn dim_requirement(&self) -> usize {
        self.f.max_index().max(self.g.max_index()).map_or(0, |i| i + 1)
    }
}

/// Probe region for the driver checks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriverProbe {
    pub dim: usize,
    pub time: (f64, f64),
    pub x_box: (f64, f64),
    pub y_box: (f64, f64),
    pub z_box: (f64, f64),
    pub n_probe: usize,
    pub seed: u64,
    pub discount: f64,
}

impl DriverProbe {
    pub fn new(dim: usize, horizon: f64) -> Self {
        Self {
            dim,
            time: (0.0, horizon),
            x_box: (-4.0, 4.0),
            y_box: (-4.0, 4.0),
            z_box: (-4.0, 4.0),
            n_probe: 2000,
            seed: 0x5eed,
            discount: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriverReport {
    /// `max |df|^2 / (|dx|^2 + |dy|^2 + |dz|^2)`, to compare with `K`.
    pub f_lipschitz_ratio: f64,
    /// `max |dg|^2 / (K(|dx|^2 + |dy|^2) + alpha_t |dz|^2)`, at most one.
    pub g_lipschitz_ratio: f64,
    pub lipschitz_pass: bool,
    /// `max alpha_t q(t, x, x)`.
    pub alpha_bound: f64,
    pub alpha_pass: bool,
    /// `max (dy)(df)/|dy|^2`, at most `-mu` when monotone.
    pub monotonicity_ratio: f64,
    pub monotonicity_pass: Option<bool>,
    /// `max |f(t+tau)-f(t)| + |g(t+tau)-g(t)|`.
    pub periodicity_defect: Option<f64>,
    /// `max |g|^2 / (g(t,x,0,0)^2 + |y|^(2 gamma) + 1)`.
    pub growth_ratio: f64,
    pub margin: f64,
    pub margin_pass: bool,
}

impl DriverReport {
    /// Conditions needed for finite-horizon solving.
    pub fn finite_horizon_pass(&self) -> bool {
        self.lipschitz_pass && self.alpha_pass
    }

    pub fn infinite_horizon_pass(&self) -> bool {
        self.finite_horizon_pass() && self.monotonicity_pass == Some(true) && self.margin_pass
    }
}

/// Checks each declared inequality on random probe tuples.
pub fn validate_driver<T: Real>(driver: &Driver, kernel: &CovarianceKernel<T>, probe: &DriverProbe) -> DriverReport {
    let d = probe.dim.max(driver.dim_requirement()).max(1);
    let mut rng = stream(probe.seed, 0);
    let unif = |rng: &mut rand_chacha::ChaCha8Rng, (a, b): (f64, f64)| a + (b - a) * rng.random::<f64>();
    let q_bound = kernel.bound_m.map(|m| m.as_f64()).unwrap_or(f64::INFINITY);
    let k = driver.lipschitz_k;
    let (mut rf, mut rg, mut amax, mut mono, mut per, mut growth) = (0.0f64, 0.0f64, 0.0f64, f64::NEG_INFINITY, 0.0f64, 0.0f64);
    for _ in 0..probe.n_probe {
        let t = unif(&mut rng, probe.time);
        let x1: Vec<f64> = (0..d).map(|_| unif(&mut rng, probe.x_box)).collect();
        let x2: Vec<f64> = (0..d).map(|_| unif(&mut rng, probe.x_box)).collect();
        let (y1, y2) = (unif(&mut rng, probe.y_box), unif(&mut rng, probe.y_box));
        let z1: Vec<f64> = (0..d).map(|_| unif(&mut rng, probe.z_box)).collect();
        let z2: Vec<f64> = (0..d).map(|_| unif(&mut rng, probe.z_box)).collect();
        let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| (u - v).powi(2)).sum::<f64>();
        let (dx2, dy2, dz2) = (sq(&x1, &x2), (y1 - y2).powi(2), sq(&z1, &z2));

        let df = driver.f.eval(t, &x1, y1, &z1) - driver.f.eval(t, &x2, y2, &z2);
        if dx2 + dy2 + dz2 > 0.0 {
            rf = rf.max(df * df / (dx2 + dy2 + dz2));
        }
        let dg = driver.g.eval(t, &x1, y1, &z1) - driver.g.eval(t, &x2, y2, &z2);
        let bound = k * (dx2 + dy2) + driver.alpha_profile * dz2;
        if dg.abs() > 1e-14 {
            rg = rg.max(if bound > 0.0 { dg * dg / bound } else { f64::INFINITY });
        }
        let qd = kernel.diag(T::lit(t), &x1.iter().map(|&v| T::lit(v)).collect::<Vec<T>>()).as_f64();
        amax = amax.max(driver.alpha_profile * qd);

        if dy2 > 0.0 {
            let dfy = driver.f.eval(t, &x1, y1, &z1) - driver.f.eval(t, &x1, y2, &z1);
            mono = mono.max((y1 - y2) * dfy / dy2);
        }
        if let Some(tau) = driver.tau {
            let pf = (driver.f.eval(t + tau, &x1, y1, &z1) - driver.f.eval(t, &x1, y1, &z1)).abs();
            let pg = (driver.g.eval(t + tau, &x1, y1, &z1) - driver.g.eval(t, &x1, y1, &z1)).abs();
            per = per.max(pf + pg);
        }
        let g0 = driver.g.eval(t, &x1, 0.0, &vec![0.0; d]);
        let gv = driver.g.eval(t, &x1, y1, &z1);
        growth = growth.max(gv * gv / (g0 * g0 + y1.abs().powf(2.0 * driver.growth_gamma) + 1.0));
    }
    let margin = driver.monotonicity_margin(probe.discount, q_bound);
    DriverReport {
        f_lipschitz_ratio: rf,
        g_lipschitz_ratio: rg,
        lipschitz_pass: rf <= k * (1.0 + 1e-9) + 1e-12 && rg <= 1.0 + 1e-9,
        alpha_bound: amax,
        alpha_pass: driver.alpha < 1.0 && amax <= driver.alpha * (1.0 + 1e-9) + 1e-15,
        monotonicity_ratio: mono,
        monotonicity_pass: driver.mu.map(|mu| mono <= -mu * (1.0 - 1e-9) + 1e-12),
        periodicity_defect: driver.tau.map(|_| per),
        growth_ratio: growth,
        margin,
        margin_pass: margin > 0.0,
    }
}

/// Parses a compact driver description such as `"-1*y + 1*cos_y"`.
pub fn parse_terms(spec: &str) -> Result<DriverFn> {
    let mut terms = Vec::new();
    let cleaned = spec.replace(' ', "");
    if cleaned.is_empty() || cleaned == "0" {
        return Ok(DriverFn::zero());
    }
    let normalized = cleaned.replace('-', "+-");
    for chunk in normalized.split('+').filter(|c| !c.is_empty()) {
        let (coeff, name) = match chunk.split_once('*') {
            Some((c, n)) => (c.parse::<f64>().map_err(|_| invalid(format!("bad coefficient in `{chunk}`")))?, n),
            None => match chunk.parse::<f64>() {
                Ok(c) => (c, "1"),
                Err(_) => match chunk.strip_prefix('-') {
                    Some(n) => (-1.0, n),
                    None => (1.0, chunk),
                },
            },
        };
        let idx = |s: &str| s.parse::<usize>().map_err(|_| invalid(format!("bad index in `{chunk}`")));
        let kind = match name {
            "1" => TermKind::Const,
            "y" => TermKind::Y,
            "sin_y" => TermKind::SinY,
            "cos_y" => TermKind::CosY,
            "tanh_y" => TermKind::TanhY,
            n if n.starts_with("sin_z") => TermKind::SinZ { index: idx(&n[5..])? },
            n if n.starts_with("sin_x") => TermKind::SinX { index: idx(&n[5..])? },
            n if n.starts_with('z') => TermKind::Z { index: idx(&n[1..])? },
            n if n.starts_with('x') => TermKind::X { index: idx(&n[1..])? },
            other => return Err(invalid(format!("unknown driver term `{other}`"))),
        };
        terms.push(DriverTerm::new(coeff, kind));
    }
    Ok(DriverFn::new(terms))
}
