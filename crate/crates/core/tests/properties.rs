use bmac_core::duality::covariance_transformation;
use bmac_core::linalg::{c, fro_norm, identity, random_cn, random_psd, solve_hpd, trace_re, CMat};
use bmac_core::netmodel::{
    is_itree, link_rates, reverse_link_rates, reverse_network, CovarianceSet, NetworkSpec,
};
use bmac_core::pwf::{waterfill_power, waterfill_rate};
use bmac_core::streams::{equal_power_precoder, equal_sinr_precoder, strategy_from_covariances};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_net(rng: &mut ChaCha8Rng, links: usize, colored: bool) -> NetworkSpec {
    let tx: Vec<usize> = (0..links).map(|_| rng.random_range(1..=3)).collect();
    let rx: Vec<usize> = (0..links).map(|_| rng.random_range(1..=3)).collect();
    let h = (0..links)
        .map(|l| (0..links).map(|k| random_cn(rng, rx[l], tx[k])).collect())
        .collect();
    let phi = DMatrix::from_fn(links, links, |i, j| {
        if i == j {
            0.0
        } else if rng.random_bool(0.6) {
            1.0
        } else {
            0.0
        }
    });
    let net = NetworkSpec::new(h, phi).unwrap();
    if !colored {
        return net;
    }
    let pd = |rng: &mut ChaCha8Rng, n: usize| random_psd(rng, n, n, n as f64) + identity(n) * c(0.2, 0.0);
    let noise = rx.iter().map(|&n| pd(rng, n)).collect();
    let weights = tx.iter().map(|&n| pd(rng, n)).collect();
    net.with_noise(noise).unwrap().with_weights(weights).unwrap()
}

fn random_sigma(rng: &mut ChaCha8Rng, net: &NetworkSpec) -> CovarianceSet {
    CovarianceSet::from_hermitian(
        net.forward_dims()
            .iter()
            .map(|&n| {
                let rank = rng.random_range(1..=n);
                let power = rng.random_range(0.1..5.0);
                random_psd(rng, n, rank, power)
            })
            .collect(),
    )
}

/// SINR of each column of `t` when columns with a higher index are still
/// present as interference and lower ones are already cancelled.
fn sic_sinrs(h: &CMat, t: &CMat) -> Vec<f64> {
    let m = t.ncols();
    (0..m)
        .map(|i| {
            let mut k = identity(h.nrows());
            for j in i + 1..m {
                let v = h * t.column(j);
                k += &v * v.adjoint();
            }
            let v = h * t.columns(i, 1);
            (v.adjoint() * solve_hpd(&k, &v).unwrap())[(0, 0)].re
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn transformation_keeps_power_and_does_not_lose_rate(seed in any::<u64>(), links in 1usize..=3, colored in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = random_net(&mut rng, links, colored);
        let sigma = random_sigma(&mut rng, &net);
        let sigma_hat = covariance_transformation(&net, &sigma).unwrap();
        let p = net.weighted_power(&sigma);
        prop_assert!((net.reverse_weighted_power(&sigma_hat) - p).abs() <= 1e-9 * p);
        let fwd = link_rates(&net, &sigma).unwrap();
        let rev = reverse_link_rates(&net, &sigma_hat).unwrap();
        for (f, r) in fwd.iter().zip(&rev) {
            prop_assert!(r - f >= -1e-9 * (1.0 + f), "forward {} reverse {}", f, r);
        }
    }

    #[test]
    fn transformation_back_again_keeps_rates(seed in any::<u64>(), links in 1usize..=3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = random_net(&mut rng, links, false);
        let sigma = random_sigma(&mut rng, &net);
        let sigma_hat = covariance_transformation(&net, &sigma).unwrap();
        let back = covariance_transformation(&reverse_network(&net), &sigma_hat).unwrap();
        let rev = reverse_link_rates(&net, &sigma_hat).unwrap();
        let again = link_rates(&net, &back).unwrap();
        for (r, a) in rev.iter().zip(&again) {
            prop_assert!(a - r >= -1e-9 * (1.0 + r));
        }
    }

    #[test]
    fn stream_decomposition_is_lossless(seed in any::<u64>(), links in 1usize..=3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = random_net(&mut rng, links, false);
        let sigma = random_sigma(&mut rng, &net);
        let strat = strategy_from_covariances(&net, &sigma).unwrap();
        let rebuilt = strat.forward_covariances(&net.forward_dims());
        for (a, b) in sigma.iter().zip(rebuilt.iter()) {
            prop_assert!(fro_norm(&(a - b)) <= 1e-10 * (1.0 + fro_norm(a)));
        }
    }

    #[test]
    fn waterfill_rate_inverts_waterfill_power(delta in prop::collection::vec(1e-3f64..50.0, 1..6), budget in 1e-3f64..100.0) {
        let w = waterfill_power(&delta, budget).unwrap();
        prop_assert!((w.power() - budget).abs() <= 1e-10 * budget);
        for (d, x) in w.d.iter().zip(&delta) {
            prop_assert!((d - (w.nu - 1.0 / x).max(0.0)).abs() <= 1e-10 * (1.0 + w.nu));
        }
        let back = waterfill_rate(&delta, w.rate(&delta)).unwrap();
        prop_assert!((back.power() - budget).abs() <= 1e-8 * (1.0 + budget));
    }

    #[test]
    fn itree_test_agrees_with_brute_force(n in 1usize..=5, bits in any::<u32>()) {
        let phi = DMatrix::from_fn(n, n, |i, j| if i != j && bits >> (i * n + j) & 1 == 1 { 1.0 } else { 0.0 });
        let valid = |perm: &[usize]| (0..n).all(|i| (0..i).all(|j| phi[(perm[i], perm[j])] == 0.0));
        let mut exists = false;
        let mut perm: Vec<usize> = (0..n).collect();
        for_each_permutation(&mut perm, 0, &mut |p| exists |= valid(p));
        match is_itree(&phi) {
            Some(p) => prop_assert!(valid(&p)),
            None => prop_assert!(!exists),
        }
        prop_assert_eq!(is_itree(&phi).is_some(), exists);
    }

    #[test]
    fn equal_sinr_streams_have_common_sinr(seed in any::<u64>(), nt in 1usize..=4, nr in 1usize..=4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = random_cn(&mut rng, nr, nt);
        let rank = rng.random_range(1..=nt);
        let power = rng.random_range(0.5..20.0);
        let sigma = random_psd(&mut rng, nt, rank, power);
        let streams = rng.random_range(rank..=nt);
        let pre = equal_sinr_precoder(&h, &sigma, streams).unwrap();
        let rebuilt = &pre.precoder * pre.precoder.adjoint();
        prop_assert!(fro_norm(&(rebuilt - &sigma)) <= 1e-9 * (1.0 + fro_norm(&sigma)));
        let sinrs = sic_sinrs(&h, &pre.precoder);
        let total: f64 = sinrs.iter().map(|s| s.ln_1p()).sum();
        prop_assert!((total - pre.rate).abs() <= 1e-8);
        for s in &sinrs {
            prop_assert!((s - pre.target_sinr).abs() <= 1e-8 * (1.0 + pre.target_sinr), "{:?} vs {}", sinrs, pre.target_sinr);
        }
    }

    #[test]
    fn equal_power_streams_split_the_trace(seed in any::<u64>(), n in 1usize..=4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rank = rng.random_range(1..=n);
        let power = rng.random_range(0.5..20.0);
        let sigma = random_psd(&mut rng, n, rank, power);
        let streams = rng.random_range(rank..=n);
        let t = equal_power_precoder(&sigma, streams).unwrap();
        let share = trace_re(&sigma) / streams as f64;
        for j in 0..streams {
            prop_assert!((t.column(j).norm_squared() - share).abs() <= 1e-10 * (1.0 + share));
        }
        prop_assert!(fro_norm(&(&t * t.adjoint() - &sigma)) <= 1e-10 * (1.0 + fro_norm(&sigma)));
    }
}

fn for_each_permutation(v: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&[usize])) {
    if k == v.len() {
        f(v);
        return;
    }
    for i in k..v.len() {
        v.swap(k, i);
        for_each_permutation(v, k + 1, f);
        v.swap(k, i);
    }
}
