use bdsde::bdsde_solver::*;
use bdsde::forward_sde::*;
use bdsde::grid::TimeGrid;
use bdsde::kunita_calculus::{request_along_paths, NoiseIntegrator};
use bdsde::noise_field::*;
use bdsde::oracles::{brownian_bundle, deterministic_fk, explicit_linear_fk, heat_closed_form, FkOptions};
use bdsde::stats::Estimate;

fn grid(t: f64, n: usize) -> TimeGrid<f64> {
    TimeGrid::uniform(0.0, t, n).unwrap()
}

fn from_point(c: &SdeCoefficients<f64>, x: f64, g: &TimeGrid<f64>, m: usize, seed: u64) -> PathBundle<f64> {
    simulate(c, InitialState::point(vec![x]), g, m, seed, false).unwrap()
}

/// Starts spread evenly over `[lo, hi]` so the step-0 surface is a function of `x`.
fn spread(c: &SdeCoefficients<f64>, lo: f64, hi: f64, g: &TimeGrid<f64>, m: usize, seed: u64, flow: bool) -> PathBundle<f64> {
    let xs = (0..m).map(|i| lo + (hi - lo) * (i as f64 + 0.5) / m as f64).collect();
    simulate(c, InitialState::PerPath { xs }, g, m, seed, flow).unwrap()
}

fn field(kernel: &CovarianceKernel<f64>, bundles: &[&PathBundle<f64>], seed: u64) -> FieldRealization<f64> {
    let mut req = PointRequest::new(1, bundles[0].grid().steps());
    for b in bundles {
        request_along_paths(&mut req, b, 0);
    }
    sample_increments(kernel, bundles[0].grid(), &req, seed).unwrap()
}

fn driver(f: &str, g: &str, kernel: &CovarianceKernel<f64>) -> Driver {
    Driver::for_kernel(parse_terms(f).unwrap(), parse_terms(g).unwrap(), kernel).unwrap()
}

fn cfg(degree: u32) -> SolverConfig {
    SolverConfig { basis: BasisKind::Polynomial { degree }, ..Default::default() }
}

fn quiet() -> CovarianceKernel<f64> {
    CovarianceKernel::constant(0.0).unwrap()
}

#[test]
fn martingale_case_returns_the_start_point() {
    let g = grid(1.0, 16);
    let b = from_point(&SdeCoefficients::brownian(1), 0.3, &g, 100_000, 1);
    let r = field(&quiet(), &[&b], 2);
    let s = solve(&driver("0", "0", &quiet()), &TerminalCondition::identity(), &b, &r, &cfg(4)).unwrap();
    assert!(s.y0().within(0.3, 3.0), "{:?}", s.y0());
}

#[test]
fn linear_decay_matches_the_backward_ode() {
    let g = grid(1.0, 256);
    let b = from_point(&SdeCoefficients::ornstein_uhlenbeck(1, 1.0, 1.0), 0.0, &g, 500, 3);
    let r = field(&quiet(), &[&b], 4);
    let s = solve(&driver("-1*y", "0", &quiet()), &TerminalCondition::Constant { value: 1.0 }, &b, &r, &cfg(2)).unwrap();
    assert!((s.y0().mean - (-1f64).exp()).abs() <= 2e-3, "{}", s.y0().mean);
}

#[test]
fn stiff_decay_follows_the_discrete_recursions() {
    let n = 20;
    let g = grid(1.0, n);
    let b = from_point(&SdeCoefficients::brownian(1), 0.0, &g, 200, 5);
    let r = field(&quiet(), &[&b], 6);
    let d = driver("-5*y", "0", &quiet());
    let one = TerminalCondition::Constant { value: 1.0 };
    let explicit = solve(&d, &one, &b, &r, &cfg(1)).unwrap().y0().mean;
    let implicit = SolverConfig { scheme: Scheme::Implicit { n_inner: 60 }, ..cfg(1) };
    let implicit = solve(&d, &one, &b, &r, &implicit).unwrap().y0().mean;
    let dt = 1.0 / n as f64;
    let want_explicit = (1.0 - 5.0 * dt).powi(n as i32);
    let want_implicit = (1.0 + 5.0 * dt).powi(-(n as i32));
    assert!((explicit - want_explicit).abs() <= 1e-12 * want_explicit.abs());
    assert!((implicit - want_implicit).abs() <= 1e-9 * want_implicit, "{implicit} {want_implicit}");
}

#[test]
fn terminal_values_are_exact_and_surfaces_are_queryable() {
    let g = grid(0.5, 8);
    let b = spread(&SdeCoefficients::ornstein_uhlenbeck(1, 1.0, 1.0), -1.0, 1.0, &g, 2000, 7, false);
    let k = CovarianceKernel::exponential(1.0, 0.5).unwrap();
    let r = field(&k, &[&b], 8);
    let phi = TerminalCondition::bump(0.2, 0.7);
    let s = solve(&driver("-1*y + 1*cos_y", "0.3*sin_y", &k), &phi, &b, &r, &cfg(4)).unwrap();
    for (p, x) in b.terminal_states().iter().enumerate() {
        assert_eq!(s.y_at(8)[p], phi.eval(&[*x]));
    }
    assert_eq!(s.surfaces().len(), 8);
    assert_eq!(s.realization_id(), r.id());
    assert!(s.u(0, &[0.0]).is_finite());
}

#[test]
fn linear_noise_agrees_with_the_explicit_estimator() {
    let g = grid(1.0, 32);
    let k = CovarianceKernel::constant(0.25).unwrap();
    let phi = TerminalCondition::bump(0.0, 0.8);
    let x = 0.2;
    let b = from_point(&SdeCoefficients::brownian(1), x, &g, 40_000, 11);
    let w = brownian_bundle(&[x], &g, 40_000, 12).unwrap();
    let r = field(&k, &[&b, &w], 13);
    let s = solve(&driver("0", "1*y", &k), &phi, &b, &r, &cfg(4)).unwrap();
    let o = explicit_linear_fk(&phi, &r, &w).unwrap();
    let tol = 3.0 * s.y0().combined_stderr(&o.estimate());
    assert!((s.y0().mean - o.mean).abs() <= tol, "{:?} {:?}", s.y0(), o);
}

#[test]
fn quiet_field_reduces_to_the_deterministic_formula() {
    let g = grid(1.0, 32);
    let phi = TerminalCondition::bump(0.5, 0.6);
    let b = from_point(&SdeCoefficients::brownian(1), 0.1, &g, 50_000, 14);
    let r = field(&quiet(), &[&b], 15);
    // Any g vanishes against a zero field.
    let s = solve(&driver("-0.5*y", "0.4*y", &quiet()), &phi, &b, &r, &cfg(4)).unwrap();
    let o = deterministic_fk(&phi, -0.5, &SdeCoefficients::<f64>::brownian(1), 0.0, 1.0, &[0.1], &FkOptions::default()).unwrap();
    let disc = (1.0 - 0.5 / 32.0f64).powi(32) / (-0.5f64).exp();
    // The explicit step discounts by (1 - dt/2)^N rather than e^{-1/2}.
    assert!(s.y0().within(o.mean * disc, 3.0), "{:?} {}", s.y0(), o.mean * disc);
    assert!((disc - 1.0).abs() < 5e-3);
}

#[test]
fn permuting_paths_leaves_regressions_unchanged() {
    let c = SdeCoefficients::ornstein_uhlenbeck(1, 0.5, 1.0);
    let g = grid(1.0, 10);
    let m = 3000;
    let a = from_point(&c, 0.1, &g, m, 16);
    let perm: Vec<usize> = (0..m).map(|i| (i * 7919) % m).collect();
    let dw: Vec<f64> = (0..10).flat_map(|k| perm.iter().map(move |&p| (k, p))).map(|(k, p)| a.increment(k, p)[0]).collect();
    let b = simulate_with_increments(&c, InitialState::point(vec![0.1]), &g, m, dw, 16, false).unwrap();
    let k = CovarianceKernel::exponential(1.0, 0.5).unwrap();
    let r = field(&k, &[&a, &b], 17);
    let d = driver("-1*y + 0.5*sin_y", "0.5*cos_y", &k);
    let phi = TerminalCondition::Cosine { amplitude: 1.0, frequency: 1.0, phase: 0.3 };
    let (sa, sb) = (solve(&d, &phi, &a, &r, &cfg(4)).unwrap(), solve(&d, &phi, &b, &r, &cfg(4)).unwrap());
    for (u, v) in sa.surfaces().iter().zip(sb.surfaces()) {
        for (x, y) in u.coefficients().iter().zip(v.coefficients()) {
            assert!((x - y).abs() <= 1e-9 * (1.0 + x.abs()), "{x} {y}");
        }
    }
    for (i, &p) in perm.iter().enumerate() {
        assert!((sb.y_at(0)[i] - sa.y_at(0)[p]).abs() <= 1e-9);
    }
}

#[test]
fn linear_drivers_are_linear_in_terminal_data() {
    let g = grid(1.0, 16);
    let b = spread(&SdeCoefficients::brownian(1), -1.0, 1.0, &g, 4000, 18, false);
    let k = CovarianceKernel::exponential(1.0, 0.4).unwrap();
    let r = field(&k, &[&b], 19);
    let d = driver("-0.5*y", "0.3*y", &k);
    let p1 = TerminalCondition::bump(0.3, 0.5);
    let p2 = TerminalCondition::Cosine { amplitude: 0.7, frequency: 2.0, phase: 0.0 };
    let sum = TerminalCondition::Sum { parts: vec![p1.clone(), p2.clone()] };
    let [s1, s2, s] = [p1, p2, sum].map(|p| solve(&d, &p, &b, &r, &cfg(5)).unwrap());
    for k in 0..=16 {
        for p in 0..4000 {
            assert!((s.y_at(k)[p] - s1.y_at(k)[p] - s2.y_at(k)[p]).abs() <= 1e-10);
        }
    }
}

#[test]
fn hat_basis_agrees_with_polynomials() {
    let g = grid(1.0, 16);
    let b = from_point(&SdeCoefficients::ornstein_uhlenbeck(1, 1.0, 1.0), 0.0, &g, 20_000, 20);
    let k = CovarianceKernel::constant(0.2).unwrap();
    let r = field(&k, &[&b], 21);
    let d = driver("-1*y + 1*cos_y", "0.3*sin_y", &k);
    let phi = TerminalCondition::bump(0.0, 1.0);
    let poly = solve(&d, &phi, &b, &r, &cfg(4)).unwrap().y0();
    let hats = SolverConfig { basis: BasisKind::PiecewiseLinear { bins: 32 }, ..Default::default() };
    let hats = solve(&d, &phi, &b, &r, &hats).unwrap().y0();
    assert!((poly.mean - hats.mean).abs() <= 3.0 * poly.combined_stderr(&hats), "{poly:?} {hats:?}");
}

#[test]
fn euler_noise_step_matches_exponential_step_on_fine_grids() {
    let k = CovarianceKernel::constant(0.5).unwrap();
    let d = driver("0", "1*y", &k);
    let phi = TerminalCondition::Constant { value: 1.0 };
    let g = grid(1.0, 512);
    let b = from_point(&SdeCoefficients::brownian(1), 0.0, &g, 100, 22);
    let r = field(&k, &[&b], 23);
    let exp = solve(&d, &phi, &b, &r, &cfg(1)).unwrap().y0().mean;
    let eul = SolverConfig { noise: NoiseIntegrator::Euler, ..cfg(1) };
    let eul = solve(&d, &phi, &b, &r, &eul).unwrap().y0().mean;
    // Exact multiplier of the linear equation on a spatially constant field.
    let mut gamma = 0.0;
    for j in 0..512 {
        gamma += r.evaluate_increment(j, b.state(j + 1, 0)).unwrap() - 0.25 / 512.0;
    }
    assert!((exp - gamma.exp()).abs() <= 1e-9 * gamma.exp());
    assert!((eul - exp).abs() <= 0.05 * exp, "{eul} {exp}");
}

#[test]
fn contraction_monitor_examples() {
    let g = grid(1.0, 20);
    let c = SdeCoefficients::ornstein_uhlenbeck(1, 1.0, 1.0);
    let b = from_point(&c, 0.0, &g, 4000, 24);
    let phi = TerminalCondition::bump(0.0, 1.0);

    let r0 = field(&quiet(), &[&b], 25);
    let d0 = driver("0", "0", &quiet());
    let rep = picard_monitor(&d0, &phi, &b, &r0, BasisKind::default(), 4, WeightedNormConfig::from_driver(&d0).unwrap()).unwrap();
    assert!(rep.distances[0] > 0.0);
    assert!(rep.distances[1..].iter().all(|d| *d <= 1e-24 * rep.distances[0]), "{:?}", rep.distances);

    let d1 = driver("-1*y", "0", &quiet());
    let rep = picard_monitor(&d1, &phi, &b, &r0, BasisKind::default(), 6, WeightedNormConfig::from_driver(&d1).unwrap()).unwrap();
    assert!(rep.ratios[1..].iter().all(|r| *r < 1.0), "{:?}", rep.ratios);
    assert!(rep.ratios[1..5].windows(2).all(|w| w[1] < w[0]), "{:?}", rep.ratios);

    let q0 = 0.25;
    let alpha: f64 = 0.5;
    let k = CovarianceKernel::constant(q0).unwrap();
    let rz = field(&k, &[&b], 26);
    let dz = driver("0", &format!("{}*z0", alpha.sqrt() / q0.sqrt()), &k);
    assert!((dz.alpha - alpha).abs() < 1e-12);
    let rep = picard_monitor(&dz, &phi, &b, &rz, BasisKind::default(), 6, WeightedNormConfig::from_driver(&dz).unwrap()).unwrap();
    assert!(rep.ratios[1..].iter().all(|r| *r < 1.0), "{:?}", rep.ratios);
    assert!(rep.median_ratio <= alpha + 0.1, "{:?}", rep.ratios);
}

fn l2_rel(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}

#[test]
fn identity_terminal_has_unit_gradient() {
    let c = SdeCoefficients::brownian(1);
    let g = grid(1.0, 16);
    let b = spread(&c, -1.0, 1.0, &g, 20_000, 27, true);
    let r = field(&quiet(), &[&b], 28);
    let d = driver("0", "0", &quiet());
    let phi = TerminalCondition::identity();
    let s = solve(&d, &phi, &b, &r, &cfg(3)).unwrap();
    let v = variational_z(&s, &b, &c, &d, &phi, &r, BasisKind::Polynomial { degree: 3 }, NoiseIntegrator::default()).unwrap();
    let mut out = [0.0];
    for x in [-0.8, -0.2, 0.0, 0.5, 0.9] {
        v.flow_z_surface(0, &[x], &c, &mut out);
        assert!((out[0] - 1.0).abs() < 1e-2, "{x} {}", out[0]);
        s.z_surface(0, &[x], &mut out);
        assert!((out[0] - 1.0).abs() < 5e-2, "{x} {}", out[0]);
    }
}

#[test]
fn bump_gradients_agree_with_the_smoothed_bump() {
    let c = SdeCoefficients::brownian(1);
    let g = grid(0.5, 8);
    let b = spread(&c, -2.5, 2.5, &g, 100_000, 29, true);
    let r = field(&quiet(), &[&b], 30);
    let d = driver("0", "0", &quiet());
    let phi = TerminalCondition::bump(0.0, 0.8);
    let s = solve(&d, &phi, &b, &r, &cfg(10)).unwrap();
    let v = variational_z(&s, &b, &c, &d, &phi, &r, BasisKind::Polynomial { degree: 10 }, NoiseIntegrator::default()).unwrap();
    let xs: Vec<f64> = (0..41).map(|i| -1.5 + 3.0 * i as f64 / 40.0).collect();
    let h = 1e-4;
    let oracle: Vec<f64> = xs
        .iter()
        .map(|x| (heat_closed_form(&phi, 0.5, &[x + h]).unwrap() - heat_closed_form(&phi, 0.5, &[x - h]).unwrap()) / (2.0 * h))
        .collect();
    let mut out = [0.0];
    let flow: Vec<f64> = xs.iter().map(|x| { v.flow_z_surface(0, &[*x], &c, &mut out); out[0] }).collect();
    let reg: Vec<f64> = xs.iter().map(|x| { s.z_surface(0, &[*x], &mut out); out[0] }).collect();
    let surf: Vec<f64> = xs.iter().map(|x| { surface_z(&s, 0, &[*x], &c, &mut out); out[0] }).collect();
    let errs = [l2_rel(&flow, &oracle), l2_rel(&reg, &oracle), l2_rel(&surf, &oracle)];
    assert!(errs.iter().all(|e| *e <= 0.05), "{errs:?}");
}

#[test]
fn flow_gradient_is_rejected_for_spatial_noise() {
    let c = SdeCoefficients::brownian(1);
    let g = grid(0.5, 8);
    let b = spread(&c, -1.0, 1.0, &g, 500, 31, true);
    let k = CovarianceKernel::exponential(1.0, 0.5).unwrap();
    let r = field(&k, &[&b], 32);
    let d = driver("0", "0.5*y", &k);
    let phi = TerminalCondition::bump(0.0, 1.0);
    let s = solve(&d, &phi, &b, &r, &cfg(3)).unwrap();
    let e = variational_z(&s, &b, &c, &d, &phi, &r, BasisKind::default(), NoiseIntegrator::default());
    assert!(matches!(e, Err(bdsde::error::Error::Precondition(_))));
    let no_flow = spread(&c, -1.0, 1.0, &g, 500, 31, false);
    let e = variational_z(&s, &no_flow, &c, &driver("0", "0", &k), &phi, &r, BasisKind::default(), NoiseIntegrator::default());
    assert!(matches!(e, Err(bdsde::error::Error::Precondition(_))));
}

#[test]
fn moment_report_examples() {
    let c = SdeCoefficients::ornstein_uhlenbeck(1, 1.0, 1.0);
    let b = from_point(&c, 0.0, &grid(1.0, 32), 2000, 33);
    let r = field(&quiet(), &[&b], 34);
    let s = solve(&driver("0", "0", &quiet()), &TerminalCondition::bump(0.0, 1.0), &b, &r, &cfg(4)).unwrap();
    let rep = moment_report(&s, 2.0).unwrap();
    assert!(rep.sup_y.mean <= 1.0 + 1e-9);
    let s = solve(&driver("-1*y", "0", &quiet()), &TerminalCondition::Constant { value: 1.0 }, &b, &r, &cfg(4)).unwrap();
    let rep = moment_report(&s, 2.0).unwrap();
    assert!((rep.sup_y.mean - 1.0).abs() < 1e-12);
    assert!(moment_report(&s, 1.0).is_err());

    let k = CovarianceKernel::constant(0.25).unwrap();
    let d = driver("0", "1*y", &k);
    let phi = TerminalCondition::bump(0.0, 0.8);
    // Both levels read the same field: the coarse positions are declared on
    // every fine sub-step and the realization is summed pairwise.
    let c = SdeCoefficients::brownian(1);
    let fine = from_point(&c, 0.0, &grid(1.0, 128), 20_000, 35);
    let coarse = fine.coarsened(&c, 2).unwrap();
    let mut req = PointRequest::new(1, 128);
    request_along_paths(&mut req, &fine, 0);
    for j in 0..64 {
        req.declare_flat(2 * j, coarse.states_at(j + 1));
        req.declare_flat(2 * j + 1, coarse.states_at(j + 1));
    }
    let rf = sample_increments(&k, fine.grid(), &req, 36).unwrap();
    let rc = rf.coarsened(2).unwrap();
    let lo = moment_report(&solve(&d, &phi, &coarse, &rc, &cfg(4)).unwrap(), 2.0).unwrap();
    let hi = moment_report(&solve(&d, &phi, &fine, &rf, &cfg(4)).unwrap(), 2.0).unwrap();
    assert!(lo.stable_against(&hi, 0.2), "{:?}", lo.refinement_ratio(&hi));
}

#[test]
fn solutions_round_trip_through_the_container() {
    let g = grid(1.0, 8);
    let b = from_point(&SdeCoefficients::brownian(1), 0.0, &g, 300, 37);
    let k = CovarianceKernel::exponential(1.0, 0.5).unwrap();
    let r = field(&k, &[&b], 38);
    let s = solve(&driver("-1*y", "0.2*sin_y", &k), &TerminalCondition::bump(0.0, 1.0), &b, &r, &cfg(4)).unwrap();
    let bytes = s.to_bytes().unwrap();
    let back = BackwardSolution::<f64>::from_bytes(&bytes).unwrap();
    assert_eq!(back, s);
    assert_eq!(back.to_bytes().unwrap(), bytes);
    let _: Estimate = back.y0();
}
