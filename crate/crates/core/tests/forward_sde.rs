use bdsde::forward_sde::*;
use bdsde::grid::TimeGrid;
use bdsde::stats::{variance, Estimate};
use proptest::prelude::*;

fn tanh_coeffs(multiplicative: bool) -> SdeCoefficients<f64> {
    let drift = DriftFamily::Tanh { base: vec![0.3], slope: vec![-0.8] };
    let diffusion = if multiplicative {
        DiffusionFamily::Tanh { base: vec![0.6], slope: vec![0.3] }
    } else {
        DiffusionFamily::Constant { matrix: vec![0.6] }
    };
    SdeCoefficients::new(1, drift, diffusion).unwrap()
}

#[test]
fn ou_variance_matches_closed_form() {
    let c = SdeCoefficients::ornstein_uhlenbeck(1, 1.0, 2f64.sqrt());
    let grid = TimeGrid::uniform(0.0, 1.0, 200).unwrap();
    let b = simulate(&c, InitialState::point(vec![0.0]), &grid, 100_000, 17, false).unwrap();
    let xs = b.terminal_states();
    let sq: Vec<f64> = xs.iter().map(|x| x * x).collect();
    let want = 1.0 - (-2.0f64).exp();
    let e = Estimate::from_samples(&sq);
    assert!(e.within(want, 3.0), "{e:?} vs {want}");
    assert!((variance(xs) - want).abs() < 3.0 * e.stderr + 1e-3);
}

#[test]
fn brownian_increments_have_step_variance() {
    let grid = TimeGrid::uniform(0.0, 2.0, 16).unwrap();
    let dw = brownian_increments(&grid, 2, 20_000, 3);
    let mean = Estimate::from_samples(&dw);
    assert!(mean.within(0.0, 3.0));
    let sq: Vec<f64> = dw.iter().map(|w| w * w / 0.125).collect();
    assert!(Estimate::from_samples(&sq).within(1.0, 3.0));
}

#[test]
fn euler_error_halves_with_the_step() {
    let c = tanh_coeffs(false);
    let fine = TimeGrid::uniform(0.0, 1.0, 256).unwrap();
    let b = simulate(&c, InitialState::point(vec![0.2]), &fine, 20_000, 5, false).unwrap();
    let level = |f: usize| b.coarsened(&c, f).unwrap();
    let gap = |a: &PathBundle<f64>, z: &PathBundle<f64>| {
        let d: Vec<f64> = a.terminal_states().iter().zip(z.terminal_states()).map(|(u, v)| (u - v).abs()).collect();
        Estimate::from_samples(&d).mean
    };
    let (l8, l4, l2) = (level(8), level(4), level(2));
    let ratio = gap(&l4, &l2) / gap(&l8, &l4);
    assert!((0.35..=0.65).contains(&ratio), "{ratio}");
}

#[test]
fn flow_matches_central_differences() {
    let c = tanh_coeffs(true);
    let grid = TimeGrid::uniform(0.0, 1.0, 100).unwrap();
    let m = 200;
    let x0 = 0.4;
    let h = 1e-4;
    let b = simulate(&c, InitialState::point(vec![x0]), &grid, m, 9, true).unwrap();
    let run = |x: f64| simulate_with_increments(&c, InitialState::point(vec![x]), &grid, m, b.increments().to_vec(), 9, false).unwrap();
    let (up, dn) = (run(x0 + h), run(x0 - h));
    let n = grid.steps();
    for p in 0..m {
        let fd = (up.state(n, p)[0] - dn.state(n, p)[0]) / (2.0 * h);
        let flow = b.flow(n, p).unwrap()[0];
        assert!((flow - fd).abs() <= 1e-2 * fd.abs(), "{flow} {fd}");
    }
    assert_eq!(b.flow(0, 0).unwrap(), &[1.0]);
}

#[test]
fn restart_reproduces_the_tail() {
    let c = tanh_coeffs(true);
    let grid = TimeGrid::uniform(0.0, 1.0, 40).unwrap();
    let b = simulate(&c, InitialState::point(vec![-0.3]), &grid, 50, 2, true).unwrap();
    let r = b.restart(&c, 17).unwrap();
    for j in 0..=23 {
        assert_eq!(r.states_at(j), b.states_at(17 + j));
    }
}

#[test]
fn ou_discounted_moment_matches_quadrature() {
    let c = SdeCoefficients::ornstein_uhlenbeck(1, 1.0, 2f64.sqrt());
    let t = 2.0;
    let grid = TimeGrid::uniform(0.0, t, 500).unwrap();
    let b = simulate(&c, InitialState::point(vec![0.0]), &grid, 100_000, 4, false).unwrap();
    let e = moment_probe(&b, 1, 1.0).unwrap();
    // Simpson on int_0^T e^{-r} (1 - e^{-2r}) dr
    let n = 2000;
    let f = |r: f64| (-r).exp() * (1.0 - (-2.0 * r).exp());
    let hh = t / n as f64;
    let s: f64 = (0..=n)
        .map(|i| {
            let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            w * f(i as f64 * hh)
        })
        .sum::<f64>()
        * hh
        / 3.0;
    assert!(e.within(s, 3.0), "{e:?} vs {s}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn bundles_are_reconstructible(seed in any::<u64>(), x in -2.0f64..2.0, m in 1usize..20) {
        let c = tanh_coeffs(true);
        let grid = TimeGrid::uniform(0.0, 0.5, 10).unwrap();
        let a = simulate(&c, InitialState::point(vec![x]), &grid, m, seed, true).unwrap();
        let b = simulate(&c, InitialState::point(vec![x]), &grid, m, seed, true).unwrap();
        prop_assert_eq!(a.to_bytes().unwrap(), b.to_bytes().unwrap());
        for p in 0..m {
            prop_assert_eq!(a.state(0, p), &[x]);
        }
    }
}
