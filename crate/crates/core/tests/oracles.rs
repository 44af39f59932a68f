use bmac_core::linalg::{c, random_cn, CMat};
use bmac_core::netmodel::NetworkSpec;
use bmac_core::pwf::single_user_waterfill_rate;
use bmac_core::rng::{stream_rng, STREAM_CHANNELS};
use bmac_core::solvers::{algorithm_a, algorithm_b, algorithm_pr1, fop_via_pr1, Init, SolverOptions, Status, Targets};
use nalgebra::DMatrix;

fn scalar(h: &[&[f64]], phi: &[&[f64]]) -> NetworkSpec {
    let n = h.len();
    NetworkSpec::new(
        (0..n).map(|l| (0..n).map(|k| CMat::from_element(1, 1, c(h[l][k], 0.0))).collect()).collect(),
        DMatrix::from_fn(n, n, |i, j| phi[i][j]),
    )
    .unwrap()
}

/// Powers meeting SINR targets in a scalar network, by solving the linear
/// system `p_l |h_ll|² = γ_l (1 + Σ_k Φ_lk |h_lk|² p_k)` directly.
fn linear_spmp(h: &[&[f64]], phi: &[&[f64]], gamma: &[f64]) -> Vec<f64> {
    let n = h.len();
    let a = DMatrix::from_fn(n, n, |l, k| {
        let g = h[l][k] * h[l][k];
        if l == k { g } else { -gamma[l] * phi[l][k] * g }
    });
    let b = nalgebra::DVector::from_column_slice(gamma);
    a.lu().solve(&b).unwrap().iter().copied().collect()
}

#[test]
fn scalar_mac_sum_power_is_three() {
    let h: &[&[f64]] = &[&[1.0, 1.0], &[1.0, 1.0]];
    let net = scalar(h, &[&[0.0, 1.0], &[0.0, 0.0]]);
    let t = Targets::uniform(2, 2f64.ln()).unwrap();
    for rep in [
        algorithm_b(&net, &t, &SolverOptions::default()).unwrap(),
        algorithm_pr1(&net, &t, &SolverOptions::default()).unwrap(),
    ] {
        assert_eq!(rep.status, Status::Converged);
        assert!((rep.sum_power - 3.0).abs() < 1e-4, "{}", rep.sum_power);
    }
}

#[test]
fn scalar_ic_matches_linear_solve() {
    let h: &[&[f64]] = &[&[1.0, 0.3], &[0.4, 0.9]];
    let phi: &[&[f64]] = &[&[0.0, 1.0], &[1.0, 0.0]];
    let rates = [0.5, 0.7];
    let gamma: Vec<f64> = rates.iter().map(|r: &f64| r.exp_m1()).collect();
    let expect: f64 = linear_spmp(h, phi, &gamma).iter().sum();
    let net = scalar(h, phi);
    let t = Targets::new(rates.to_vec()).unwrap();
    for rep in [
        algorithm_b(&net, &t, &SolverOptions::default()).unwrap(),
        algorithm_pr1(&net, &t, &SolverOptions::default()).unwrap(),
    ] {
        assert!((rep.sum_power - expect).abs() < 1e-4, "{} vs {}", rep.sum_power, expect);
    }
}

#[test]
fn scalar_mac_balance_level() {
    let net = scalar(&[&[1.0, 1.0], &[1.0, 1.0]], &[&[0.0, 1.0], &[0.0, 0.0]]);
    let t = Targets::uniform(2, 0.5).unwrap();
    // equal rates αt on both links cost e^{2αt} − 1
    let total = 8.0;
    let expect = (1.0f64 + total).ln() / (2.0 * 0.5);
    let a = algorithm_a(&net, &t, total, &SolverOptions::default()).unwrap();
    assert!((a.alpha.unwrap() - expect).abs() < 1e-6 * expect, "{:?}", a.alpha);
    let f = fop_via_pr1(&net, &t, total, &SolverOptions::default()).unwrap();
    assert!((f.alpha.unwrap() - expect).abs() < 1e-2 * expect, "{:?}", f.alpha);
}

#[test]
fn equal_sinr_streams_reach_capacity_power() {
    // A single MIMO link with M = rank H streams at the common SINR e^{I/M} − 1
    // needs no more power than water-filling. Starting on the singular vectors
    // is a crosstalk-free fixed point that never mixes streams.
    let mut rng = stream_rng(11, STREAM_CHANNELS);
    for seed in 0..5 {
        let h = random_cn(&mut rng, 3, 3);
        let net = NetworkSpec::new(vec![vec![h.clone()]], DMatrix::zeros(1, 1)).unwrap();
        let target = 3.0;
        let (_, wf) = single_user_waterfill_rate(&h, target).unwrap();
        let t = Targets::new(vec![target]).unwrap();
        let rep = algorithm_b(&net, &t, &SolverOptions { init: Init::Random(seed), ..Default::default() }).unwrap();
        assert_eq!(rep.status, Status::Converged);
        assert!((rep.rates[0] - target).abs() < 1e-6);
        assert!((rep.sum_power - wf.power()).abs() <= 1e-6 * wf.power(), "{} vs {}", rep.sum_power, wf.power());
        let svd_start = algorithm_b(&net, &t, &SolverOptions::default()).unwrap();
        assert!(svd_start.sum_power >= rep.sum_power * (1.0 - 1e-9));
    }
}
