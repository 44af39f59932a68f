//! Polite water-filling solvers: PR for iTree networks, PR1 for general
//! networks, and the FOP search built on PR1.

use super::{
    forward_record, rate_gap, reverse_record, Init, SolveReport, SolverOptions, Status, TraceRecord, Targets,
};
use crate::duality::covariance_transformation;
use crate::error::{Error, Result};
use crate::linalg::{identity, random_psd, CMat};
use crate::netmodel::{
    interference_covariances, is_itree, link_rates, reverse_interference_covariance,
    reverse_interference_covariances, reverse_network, sub_network, CovarianceSet, NetworkSpec,
};
use crate::pwf::{
    assemble, equivalent_channel, trace_weights, waterfill_rate, waterfill_weighted, PwfDecomposition,
};
use crate::rng::{stream_rng, STREAM_SOLVER};

/// Covariances produced by one polite water-filling half step.
#[derive(Clone, Debug)]
pub struct HalfStep {
    pub cov: CovarianceSet,
    pub levels: Vec<PwfDecomposition>,
    /// Links whose water level was lowered to respect a power cap.
    pub capped: Vec<bool>,
}

fn check_state(net: &NetworkSpec, omega: &[CMat], omega_hat: &[CMat]) -> Result<()> {
    if omega.len() != net.links() || omega_hat.len() != net.links() {
        return Err(Error::Dimension("interference state must cover every link".into()));
    }
    Ok(())
}

/// Forward update: each transmitter water-fills over
/// `Ω^{-1/2} H Ω̂^{-1/2}` at its target rate and maps back through `Ω̂^{-1/2}`.
/// With `caps`, a link whose trace would exceed its cap has its level lowered
/// until the trace equals the cap.
pub fn pr1_half_forward(
    net: &NetworkSpec,
    targets: &Targets,
    omega: &[CMat],
    omega_hat: &[CMat],
    caps: Option<&[f64]>,
) -> Result<HalfStep> {
    check_state(net, omega, omega_hat)?;
    let mut cov = Vec::with_capacity(net.links());
    let mut levels = Vec::with_capacity(net.links());
    let mut capped = vec![false; net.links()];
    for l in 0..net.links() {
        let eq = equivalent_channel(&omega[l], net.channel(l, l), &omega_hat[l])?;
        let mut wf = waterfill_rate(&eq.delta, targets.rates()[l])?;
        if let Some(caps) = caps {
            let w = trace_weights(&eq.g, &eq.omega_hat_inv_sqrt);
            let used: f64 = w.iter().zip(&wf.d).map(|(a, b)| a * b).sum();
            if used > caps[l] {
                wf = waterfill_weighted(&eq.delta, &w, caps[l])?;
                capped[l] = true;
            }
        }
        cov.push(assemble(&eq.g, &eq.omega_hat_inv_sqrt, &wf.d));
        levels.push(wf);
    }
    Ok(HalfStep { cov: CovarianceSet::from_hermitian(cov), levels, capped })
}

/// Reverse update: each receiver water-fills over the same equivalent channel
/// and maps back through `Ω^{-1/2}`.
pub fn pr1_half_reverse(
    net: &NetworkSpec,
    targets: &Targets,
    omega: &[CMat],
    omega_hat: &[CMat],
) -> Result<HalfStep> {
    check_state(net, omega, omega_hat)?;
    let mut cov = Vec::with_capacity(net.links());
    let mut levels = Vec::with_capacity(net.links());
    for l in 0..net.links() {
        let eq = equivalent_channel(&omega[l], net.channel(l, l), &omega_hat[l])?;
        let wf = waterfill_rate(&eq.delta, targets.rates()[l])?;
        cov.push(assemble(&eq.f, &eq.omega_inv_sqrt, &wf.d));
        levels.push(wf);
    }
    Ok(HalfStep { cov: CovarianceSet::from_hermitian(cov), levels, capped: vec![false; net.links()] })
}

fn random_set(dims: &[usize], seed: u64) -> CovarianceSet {
    let mut rng = stream_rng(seed, STREAM_SOLVER);
    let each = 1.0 / dims.len().max(1) as f64;
    CovarianceSet::from_hermitian(dims.iter().map(|&n| random_psd(&mut rng, n, n, each)).collect())
}

/// PR1: alternate full-network polite water-filling in the forward and
/// reverse links until the sum power settles. The reverse update reuses the
/// `Ω̂` of the preceding forward update.
pub fn algorithm_pr1(net: &NetworkSpec, targets: &Targets, opts: &SolverOptions) -> Result<SolveReport> {
    if !net.is_white() {
        return Err(Error::Invalid("algorithm PR1 expects a whitened network".into()));
    }
    targets.check(net)?;
    let mut sigma_hat = match &opts.init {
        Init::Default => CovarianceSet::scaled_identity(&net.reverse_dims(), 1.0),
        Init::Random(seed) => random_set(&net.reverse_dims(), *seed),
        Init::Covariances(s) => {
            s.check_dims(&net.reverse_dims())?;
            s.clone()
        }
    };
    let mut omega: Vec<CMat> = net.reverse_dims().iter().map(|&n| identity(n)).collect();
    let mut trace = Vec::new();
    let mut status = Status::MaxIters;
    let mut prev = f64::NAN;
    let mut last: Option<HalfStep> = None;
    for it in 1..=opts.max_iters {
        let omega_hat = reverse_interference_covariances(net, &sigma_hat)?;
        let fwd = pr1_half_forward(net, targets, &omega, &omega_hat, None)?;
        let rec = forward_record(net, &fwd.cov, it, opts.trace_residuals)?;
        let power = rec.sum_power;
        let gap = rate_gap(&rec.rates, targets);
        trace.push(rec);
        omega = interference_covariances(net, &fwd.cov)?;
        let done = (power - prev).abs() <= opts.tol * power && gap <= opts.rate_tol;
        let blown = !(power <= opts.power_cap);
        last = Some(fwd);
        if blown {
            status = Status::InfeasibleAtCap;
            break;
        }
        if done {
            status = Status::Converged;
            break;
        }
        prev = power;
        if it == opts.max_iters {
            break;
        }
        sigma_hat = pr1_half_reverse(net, targets, &omega, &omega_hat)?.cov;
        trace.push(reverse_record(net, &sigma_hat, it, opts.trace_residuals)?);
    }
    let fwd = last.ok_or_else(|| Error::Invalid("max_iters must be positive".into()))?;
    let rates = link_rates(net, &fwd.cov)?;
    Ok(SolveReport {
        status,
        sum_power: net.weighted_power(&fwd.cov),
        nu: fwd.levels.iter().map(|w| w.nu).collect(),
        sigma: fwd.cov,
        sigma_hat: Some(sigma_hat),
        trace,
        alpha: None,
        c_max: None,
        rates,
        monotone_violations: 0,
    })
}

fn unpermute_rates(rates: &[f64], perm: &[usize]) -> Vec<f64> {
    let mut out = vec![0.0; rates.len()];
    for (i, &p) in perm.iter().enumerate() {
        out[p] = rates[i];
    }
    out
}

fn unpermute_record(mut rec: TraceRecord, perm: &[usize]) -> TraceRecord {
    rec.rates = unpermute_rates(&rec.rates, perm);
    rec
}

/// PR for iTree networks. Links are reindexed internally so that no link is
/// interfered by a lower-indexed one; each sweep visits the links in that
/// order, improving the newest reverse link of the growing sub-network by
/// water-filling at its target rate and mapping the sub-network back with the
/// covariance transformation.
pub fn algorithm_pr(net: &NetworkSpec, targets: &Targets, opts: &SolverOptions) -> Result<SolveReport> {
    targets.check(net)?;
    let perm = is_itree(net.coupling_matrix()).ok_or(Error::NoITreeOrder)?;
    let netp = net.permuted(&perm)?;
    let tp = targets.permuted(&perm);
    let n = netp.links();
    let mut sigma = match &opts.init {
        Init::Default => CovarianceSet::scaled_identity(&netp.forward_dims(), 1.0),
        Init::Random(seed) => random_set(&netp.forward_dims(), *seed),
        Init::Covariances(s) => {
            s.check_dims(&net.forward_dims())?;
            s.permuted(&perm)
        }
    };
    let mut nu = vec![0.0; n];
    let mut trace = Vec::new();
    let mut status = Status::MaxIters;
    let mut prev: Option<(f64, bool)> = None;
    let mut violations = 0;
    let mut last_hat = None;
    for sweep in 1..=opts.max_iters {
        for i in 0..n {
            let (sub, _) = sub_network(&netp, &sigma, i + 1)?;
            let head = CovarianceSet::from_hermitian(sigma.as_slice()[..=i].to_vec());
            let mut hat = covariance_transformation(&sub, &head)?;
            let omega_hat = reverse_interference_covariance(&sub, &hat, i)?;
            let eq = equivalent_channel(sub.noise(i), sub.channel(i, i), &omega_hat)?;
            let wf = waterfill_rate(&eq.delta, tp.rates()[i])?;
            hat.set(i, assemble(&eq.f, &eq.omega_inv_sqrt, &wf.d));
            nu[i] = wf.nu;
            if i + 1 == n {
                let rec = reverse_record(&netp, &hat, sweep, opts.trace_residuals)?;
                trace.push(unpermute_record(rec, &perm));
                last_hat = Some(hat.clone());
            }
            let fresh = covariance_transformation(&reverse_network(&sub), &hat)?;
            for (l, m) in fresh.into_inner().into_iter().enumerate() {
                sigma.set(l, m);
            }
        }
        let rec = forward_record(&netp, &sigma, sweep, opts.trace_residuals)?;
        let power = rec.sum_power;
        let feasible = rec.rates.iter().zip(tp.rates()).all(|(r, t)| *r >= t - 1e-9);
        let gap = rate_gap(&rec.rates, &tp);
        trace.push(unpermute_record(rec, &perm));
        if !(power <= opts.power_cap) {
            status = Status::InfeasibleAtCap;
            break;
        }
        if let Some((p0, was_feasible)) = prev {
            if was_feasible && power > p0 * (1.0 + 1e-10) {
                violations += 1;
            }
            if (power - p0).abs() <= opts.tol * power && gap <= opts.rate_tol {
                status = Status::Converged;
                break;
            }
        }
        prev = Some((power, feasible));
    }
    let sigma_out = sigma.unpermuted(&perm);
    let rates = link_rates(net, &sigma_out)?;
    Ok(SolveReport {
        status,
        sum_power: net.weighted_power(&sigma_out),
        nu: unpermute_rates(&nu, &perm),
        sigma: sigma_out,
        sigma_hat: last_hat.map(|h| h.unpermuted(&perm)),
        trace,
        alpha: None,
        c_max: None,
        rates,
        monotone_violations: violations,
    })
}

/// FOP through PR1: the largest `α` whose scaled targets `α I⁰` PR1 can meet
/// within `total_power`. The upper end doubles until PR1 needs more than the
/// budget or hits the cap; bisection then stops once the used power is
/// within `1e-3` of the budget.
pub fn fop_via_pr1(net: &NetworkSpec, targets: &Targets, total_power: f64, opts: &SolverOptions) -> Result<SolveReport> {
    if !(total_power > 0.0) {
        return Err(Error::Invalid(format!("power budget {total_power}")));
    }
    let within = |rep: &SolveReport| (rep.sum_power - total_power).abs() <= 1e-3 * total_power;
    let fits = |rep: &SolveReport| rep.status != Status::InfeasibleAtCap && rep.sum_power <= total_power;
    let run = |alpha: f64| algorithm_pr1(net, &targets.scaled(alpha), opts);
    let mut lo = 0.0;
    let mut best: Option<(f64, SolveReport)> = None;
    let mut hi = 1.0;
    loop {
        let rep = run(hi)?;
        if fits(&rep) {
            if within(&rep) {
                return Ok(with_alpha(rep, hi));
            }
            lo = hi;
            best = Some((hi, rep));
            hi *= 2.0;
            if hi > 1e12 {
                return Err(Error::Invalid("targets need no power".into()));
            }
        } else {
            break;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let rep = run(mid)?;
        if fits(&rep) {
            if within(&rep) {
                return Ok(with_alpha(rep, mid));
            }
            lo = mid;
            best = Some((mid, rep));
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    match best {
        Some((a, rep)) => Ok(with_alpha(rep, a)),
        None => Err(Error::Infeasible("no positive scaling fits the budget".into())),
    }
}

fn with_alpha(mut rep: SolveReport, alpha: f64) -> SolveReport {
    rep.alpha = Some(alpha);
    rep
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c, random_cn};
    use crate::pwf::single_user_waterfill_rate;
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar(h: &[&[f64]], phi: &[&[f64]]) -> NetworkSpec {
        let n = h.len();
        NetworkSpec::new(
            (0..n).map(|l| (0..n).map(|k| CMat::from_element(1, 1, c(h[l][k], 0.0))).collect()).collect(),
            DMatrix::from_fn(n, n, |i, j| phi[i][j]),
        )
        .unwrap()
    }

    #[test]
    fn single_link_is_classical_waterfilling() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let h = random_cn(&mut rng, 3, 2);
        let net = NetworkSpec::new(vec![vec![h.clone()]], DMatrix::zeros(1, 1)).unwrap();
        let t = Targets::new(vec![2.5]).unwrap();
        let (wf, dec) = single_user_waterfill_rate(&h, 2.5).unwrap();
        let rep = algorithm_pr1(&net, &t, &SolverOptions::default()).unwrap();
        assert_eq!(rep.status, Status::Converged);
        assert!(crate::linalg::fro_norm(&(&rep.sigma[0] - &wf)) < 1e-9);
        let pr = algorithm_pr(&net, &t, &SolverOptions::default()).unwrap();
        assert!((pr.sum_power - dec.power()).abs() < 1e-9);
    }

    #[test]
    fn scalar_mac_total_power() {
        let mac = scalar(&[&[1.0, 1.0], &[1.0, 1.0]], &[&[0.0, 1.0], &[0.0, 0.0]]);
        let t = Targets::uniform(2, 2f64.ln()).unwrap();
        let rep = algorithm_pr1(&mac, &t, &SolverOptions::default()).unwrap();
        assert_eq!(rep.status, Status::Converged);
        assert!((rep.sum_power - 3.0).abs() < 1e-4, "{}", rep.sum_power);
        let pr = algorithm_pr(&mac, &t, &SolverOptions::default()).unwrap();
        assert!((pr.sum_power - 3.0).abs() < 1e-4, "{}", pr.sum_power);
    }

    #[test]
    fn chain_matches_cascade() {
        // link 2 interfered by link 1 only
        let chain = scalar(&[&[1.0, 0.0], &[0.5, 2.0]], &[&[0.0, 0.0], &[1.0, 0.0]]);
        let t = Targets::new(vec![1.0, 0.8]).unwrap();
        let p1 = 1f64.exp_m1();
        let p2 = 0.8f64.exp_m1() * (1.0 + 0.25 * p1) / 4.0;
        let rep = algorithm_pr(&chain, &t, &SolverOptions::default()).unwrap();
        assert!((rep.sum_power - (p1 + p2)).abs() < 1e-6, "{} vs {}", rep.sum_power, p1 + p2);
        assert_eq!(rep.monotone_violations, 0);
    }

    #[test]
    fn pr_rejects_cycles() {
        let ic = scalar(&[&[1.0, 0.1], &[0.1, 1.0]], &[&[0.0, 1.0], &[1.0, 0.0]]);
        let t = Targets::uniform(2, 0.5).unwrap();
        assert!(matches!(algorithm_pr(&ic, &t, &SolverOptions::default()), Err(Error::NoITreeOrder)));
    }

    #[test]
    fn fop_single_link() {
        let net = scalar(&[&[1.0]], &[&[0.0]]);
        let t = Targets::new(vec![0.5]).unwrap();
        let rep = fop_via_pr1(&net, &t, 3.0, &SolverOptions::default()).unwrap();
        let expect = 4f64.ln() / 0.5;
        assert!((rep.alpha.unwrap() - expect).abs() < 2e-3 * expect, "{:?}", rep.alpha);
        assert!((rep.sum_power - 3.0).abs() <= 3e-3);
    }
}
