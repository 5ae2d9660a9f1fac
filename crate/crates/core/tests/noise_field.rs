use bdsde::grid::TimeGrid;
use bdsde::noise_field::*;
use bdsde::stats::{covariance, covariance_stderr, Estimate};
use bdsde::Error;
use proptest::prelude::*;

fn one_point(kernel: &CovarianceKernel<f64>, steps: usize, dt: f64, pts: &[f64], seed: u64) -> FieldRealization<f64> {
    let grid = TimeGrid::uniform(0.0, dt * steps as f64, steps).unwrap();
    let mut req = PointRequest::new(1, steps);
    req.declare_everywhere(pts);
    sample_increments(kernel, &grid, &req, seed).unwrap()
}

#[test]
fn exponential_kernel_value_at_unit_distance() {
    let k = CovarianceKernel::exponential(0.5, 1.0).unwrap();
    let want = (-1.0f64 / 0.5).exp();
    assert!((k.eval(0.3, &[0.0], &[1.0]).unwrap() - want).abs() < 1e-15);
    assert!((want - 0.1353).abs() < 1e-4);
}

#[test]
fn zero_length_step_has_zero_increment() {
    let k = CovarianceKernel::exponential(1.0, 1.0).unwrap();
    let mut rng = bdsde::rng::stream(1, 0);
    let (v, _) = sample_step(&k, 0.0, 0.0, &[0.0, 1.0, 2.0], 1, &SamplerConfig::default(), &mut rng, 0).unwrap();
    assert_eq!(v, vec![0.0; 3]);
}

#[test]
fn constant_kernel_step_variance() {
    let q0 = 0.7;
    let r = one_point(&CovarianceKernel::constant(q0).unwrap(), 100_000, 0.01, &[0.0], 3);
    let xs: Vec<f64> = (0..r.n_steps()).map(|k| r.evaluate_increment(k, &[0.0]).unwrap()).collect();
    let sq: Vec<f64> = xs.iter().map(|x| x * x).collect();
    let e = Estimate::from_samples(&sq);
    assert!(e.within(q0 * 0.01, 3.0), "{e:?}");
}

#[test]
fn exponential_kernel_pair_covariance() {
    let k = CovarianceKernel::exponential(1.0, 1.0).unwrap();
    let dt = 0.01;
    let (x, y) = (0.2, 0.9);
    let r = one_point(&k, 100_000, dt, &[x, y], 8);
    let a: Vec<f64> = (0..r.n_steps()).map(|s| r.evaluate_increment(s, &[x]).unwrap() / dt.sqrt()).collect();
    let b: Vec<f64> = (0..r.n_steps()).map(|s| r.evaluate_increment(s, &[y]).unwrap() / dt.sqrt()).collect();
    let want = (-(0.7f64)).exp();
    assert!((covariance(&a, &b) - want).abs() <= 3.0 * covariance_stderr(&a, &b));
}

#[test]
fn pairwise_moments_match_step_covariance() {
    let kernels = [
        CovarianceKernel::exponential(0.8, 1.3).unwrap(),
        CovarianceKernel::squared_exponential(0.6, 0.9).unwrap(),
    ];
    let pts = [-1.0, -0.3, 0.0, 0.4, 1.5];
    for (i, k) in kernels.iter().enumerate() {
        let dt = 0.02;
        let r = one_point(k, 20_000, dt, &pts, 40 + i as u64);
        let series: Vec<Vec<f64>> = pts
            .iter()
            .map(|&x| (0..r.n_steps()).map(|s| r.evaluate_increment(s, &[x]).unwrap()).collect())
            .collect();
        for a in 0..pts.len() {
            for b in 0..=a {
                let want = k.eval(0.0, &[pts[a]], &[pts[b]]).unwrap() * dt;
                let got = covariance(&series[a], &series[b]);
                assert!((got - want).abs() <= 4.0 * covariance_stderr(&series[a], &series[b]), "{a} {b} {got} {want}");
            }
        }
    }
}

#[test]
fn telescoping_sum_and_its_variance() {
    let k = CovarianceKernel::exponential(1.0, 0.5).unwrap();
    let steps = 32;
    let totals: Vec<f64> = (0..4000)
        .map(|s| {
            let r = one_point(&k, steps, 1.0 / 32.0, &[0.3], s);
            let direct: f64 = (0..steps).map(|j| r.evaluate_increment(j, &[0.3]).unwrap()).sum();
            let acc = r.accumulate(&[0.3], 0, steps).unwrap();
            assert!((acc - direct).abs() < 1e-14);
            acc
        })
        .collect();
    let sq: Vec<f64> = totals.iter().map(|x| x * x).collect();
    assert!(Estimate::from_samples(&sq).within(0.5, 3.0));
}

#[test]
fn undeclared_point_is_a_missing_point() {
    let r = one_point(&CovarianceKernel::constant(1.0).unwrap(), 4, 0.1, &[0.0, 1.0], 1);
    assert!(matches!(r.evaluate_increment(2, &[0.5]), Err(Error::MissingPoint { step: 2, .. })));
    let a = r.evaluate_increment(1, &[1.0]).unwrap();
    let shared = r.clone();
    assert_eq!(shared.evaluate_increment(1, &[1.0]).unwrap(), a);
}

#[test]
fn batch_lookup_matches_pointwise_lookup() {
    let k = CovarianceKernel::exponential(0.5, 1.0).unwrap();
    let pts: Vec<f64> = (0..200).map(|i| ((i * 37) % 200) as f64 * 0.03 - 3.0).collect();
    let r = one_point(&k, 3, 0.1, &pts, 9);
    let mut queries = pts.clone();
    queries.extend([0.0, -3.0, 0.0, 2.97, 2.97 + 1e-14]);
    for step in 0..3 {
        let batch = r.evaluate_increments(step, &queries).unwrap();
        for (x, v) in queries.iter().zip(&batch) {
            assert_eq!(r.evaluate_increment(step, &[*x]).unwrap().to_bits(), v.to_bits());
        }
    }
    assert!(matches!(r.evaluate_increments(1, &[0.0, 0.015]), Err(Error::MissingPoint { step: 1, .. })));
}

#[test]
fn jitter_stays_below_cap_on_shipped_families() {
    let kernels = [
        CovarianceKernel::constant(1.0).unwrap(),
        CovarianceKernel::exponential(0.5, 1.0).unwrap(),
        CovarianceKernel::squared_exponential(1.0, 2.0).unwrap(),
    ];
    let pts: Vec<f64> = (0..120).map(|i| -5.0 + 10.0 * i as f64 / 119.0).collect();
    for k in &kernels {
        let r = one_point(k, 4, 0.1, &pts, 2);
        assert!(r.max_jitter() <= 1e-8, "{}", r.max_jitter());
    }
}

#[test]
fn coincident_points_are_merged() {
    let k = CovarianceKernel::squared_exponential(1.0, 1.0).unwrap();
    let r = one_point(&k, 2, 0.1, &[0.5, 0.5, 0.5 + 1e-14, 1.0], 5);
    assert_eq!(r.step(0).len(), 2);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sampling_is_deterministic_and_round_trips(seed in any::<u64>(), n in 1usize..12, len in 0.2f64..3.0) {
        let k = CovarianceKernel::squared_exponential(len, 1.0).unwrap();
        let pts: Vec<f64> = (0..n).map(|i| i as f64 * 0.37 - 1.0).collect();
        let a = one_point(&k, 6, 0.05, &pts, seed);
        let b = one_point(&k, 6, 0.05, &pts, seed);
        let bytes = a.to_bytes().unwrap();
        prop_assert_eq!(&bytes, &b.to_bytes().unwrap());
        let back = FieldRealization::<f64>::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back, a);
    }

    #[test]
    fn kernels_are_symmetric(x in -4.0f64..4.0, y in -4.0f64..4.0, s in 0.0f64..2.0) {
        for k in [CovarianceKernel::exponential(0.7, 1.1).unwrap(), CovarianceKernel::squared_exponential(1.4, 0.3).unwrap()] {
            prop_assert_eq!(k.eval(s, &[x], &[y]).unwrap(), k.eval(s, &[y], &[x]).unwrap());
        }
    }
}
