//! Stream-level solvers: max-min SINR balancing (Algorithm A) and SINR-target
//! power control (Algorithm B), both alternating between forward and reverse
//! links through SINR duality.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::{forward_record, reverse_record, Init, SolveReport, SolverOptions, Status, Targets};
use crate::duality::{dual_powers, primal_powers, DualScaling};
use crate::error::{Error, Result};
use crate::linalg::{random_cn, thin_svd, unit, CVec};
use crate::netmodel::{CovarianceSet, NetworkSpec};
use crate::pwf::pwf_fits;
use crate::rng::{stream_rng, STREAM_SOLVER};
use crate::streams::{
    crosstalk, direct_gains, forward_sinrs, mmse_sic_receivers, mmse_sic_transmitters, outer_sum,
    reverse_sinrs, unflatten,
};

/// Result of a sum-power-constrained balancing step.
#[derive(Clone, Debug)]
pub struct Balanced {
    pub powers: Vec<f64>,
    /// Common ratio `γ/γ⁰` of every stream.
    pub level: f64,
}

/// Powers maximizing the common scaled SINR `γ_i/γ⁰_i` under `Σ p = total`.
///
/// The balanced point solves the eigen-system `λ p = DΨ p + D1`,
/// `(1/P)1ᵀ(DΨ p + D1) = λ` with `1/λ` the balanced level. For `λ` above the
/// spectral radius of `DΨ`, `p(λ) = (λI − DΨ)⁻¹ D1` is nonnegative and its sum
/// falls monotonically to zero, so the dominant eigenpair is located by
/// bisection on `1ᵀp(λ) = P`.
pub fn balance_powers(d: &[f64], psi: &DMatrix<f64>, total: f64) -> Result<Balanced> {
    let n = d.len();
    if !(total > 0.0) {
        return Err(Error::Invalid(format!("power budget {total}")));
    }
    let a = DMatrix::from_fn(n, n, |i, j| d[i] * psi[(i, j)]);
    let b = DVector::from_column_slice(d);
    if b.iter().all(|&x| x == 0.0) {
        return Ok(Balanced { powers: vec![0.0; n], level: f64::INFINITY });
    }
    let solve = |lam: f64| -> Option<DVector<f64>> {
        let m = DMatrix::from_fn(n, n, |i, j| if i == j { lam } else { 0.0 } - a[(i, j)]);
        let x = m.lu().solve(&b)?;
        let ok = x.iter().all(|v| v.is_finite() && *v >= 0.0);
        ok.then_some(x)
    };
    // upper bracket: row sums bound the spectral radius
    let row_max = (0..n).map(|i| a.row(i).sum()).fold(0.0, f64::max);
    let mut hi = row_max + b.sum() / total + 1e-300;
    while solve(hi).is_none_or(|x| x.sum() > total) {
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::Eigen("balancing bracket".into()));
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        match solve(mid) {
            Some(x) if x.sum() <= total => hi = mid,
            _ => lo = mid,
        }
    }
    let p = solve(hi).ok_or_else(|| Error::Eigen("balanced powers not positive".into()))?;
    Ok(Balanced { powers: p.iter().copied().collect(), level: 1.0 / hi })
}

fn initial_vectors(net: &NetworkSpec, streams: &[usize], init: &Init) -> Result<Vec<Vec<CVec>>> {
    match init {
        Init::Default | Init::Covariances(_) => Ok((0..net.links())
            .map(|l| {
                let v = thin_svd(net.channel(l, l)).v;
                (0..streams[l]).map(|j| v.column(j).into_owned()).collect()
            })
            .collect()),
        Init::Random(seed) => {
            let mut rng = stream_rng(*seed, STREAM_SOLVER);
            Ok((0..net.links())
                .map(|l| {
                    (0..streams[l])
                        .map(|_| loop {
                            let v = random_cn(&mut rng, net.tx_antennas(l), 1).column(0).into_owned();
                            if let Some(u) = unit(&v) {
                                break u;
                            }
                            let _: f64 = rng.random();
                        })
                        .collect()
                })
                .collect())
        }
    }
}

fn expand(per_link: &[f64], counts: &[usize]) -> Vec<f64> {
    counts.iter().zip(per_link).flat_map(|(&m, &g)| std::iter::repeat_n(g, m)).collect()
}

fn covariances(vecs: &[Vec<CVec>], powers: &[Vec<f64>], dims: &[usize]) -> CovarianceSet {
    CovarianceSet::from_hermitian(
        vecs.iter().zip(powers).zip(dims).map(|((v, p), &d)| outer_sum(v, p, d)).collect(),
    )
}

fn finish(
    net: &NetworkSpec,
    status: Status,
    trace: Vec<super::TraceRecord>,
    sigma: CovarianceSet,
    sigma_hat: Option<CovarianceSet>,
) -> Result<SolveReport> {
    let rates = crate::netmodel::link_rates(net, &sigma)?;
    let nu = pwf_fits(net, &sigma)?.into_iter().map(|f| f.nu).collect();
    Ok(SolveReport {
        status,
        sum_power: net.weighted_power(&sigma),
        trace,
        sigma,
        sigma_hat,
        nu,
        alpha: None,
        c_max: None,
        rates,
        monotone_violations: 0,
    })
}

/// Max-min scaled rate under a sum-power budget, via per-stream SINR
/// balancing. Each iteration runs a forward half (MMSE-SIC receivers, then
/// balanced forward powers) and a reverse half (balanced reverse powers, then
/// MMSE-SIC transmit vectors); the run ends on a forward half.
pub fn algorithm_a(net: &NetworkSpec, targets: &Targets, total_power: f64, opts: &SolverOptions) -> Result<SolveReport> {
    if !net.is_white() {
        return Err(Error::Invalid("algorithm A expects a whitened network".into()));
    }
    let gamma0 = targets.sinr_targets(net)?;
    let counts = Targets::streams(net);
    let g0 = expand(&gamma0, &counts);
    let mut t = initial_vectors(net, &counts, &opts.init)?;
    let total_streams: usize = counts.iter().sum();
    let mut p = unflatten(&vec![total_power / total_streams.max(1) as f64; total_streams], &counts);
    let mut trace = Vec::new();
    let mut prev = f64::NAN;
    let mut status = Status::MaxIters;
    let mut c_max = 0.0;
    let mut sigma_hat = None;
    for it in 1..=opts.max_iters {
        let r = mmse_sic_receivers(net, &t, &p)?;
        let psi = crosstalk(net, &t, &r)?;
        let gains = direct_gains(net, &t, &r)?;
        let scaling = DualScaling::new(&gains, &g0)?;
        let fwd = balance_powers(&scaling.d, &psi.matrix, total_power)?;
        p = unflatten(&fwd.powers, &counts);
        c_max = fwd.level;
        let sigma = covariances(&t, &p, &net.forward_dims());
        trace.push(forward_record(net, &sigma, it, opts.trace_residuals)?);
        if (c_max - prev).abs() <= opts.tol * c_max.abs() {
            status = Status::Converged;
            break;
        }
        prev = c_max;
        if it == opts.max_iters {
            break;
        }
        let rev = balance_powers(&scaling.d, &psi.matrix.transpose(), total_power)?;
        let q = unflatten(&rev.powers, &counts);
        sigma_hat = Some(covariances(&r, &q, &net.reverse_dims()));
        trace.push(reverse_record(net, sigma_hat.as_ref().unwrap(), it, opts.trace_residuals)?);
        t = mmse_sic_transmitters(net, &r, &q)?;
    }
    let sigma = covariances(&t, &p, &net.forward_dims());
    let mut rep = finish(net, status, trace, sigma, sigma_hat)?;
    rep.c_max = Some(c_max);
    rep.alpha = Some(super::optimality::fit_alpha_min(&rep.rates, targets));
    Ok(rep)
}

/// Sum-power minimization at per-stream SINR targets by fixed-point power
/// control `p ← (γ⁰/γ) p` in both directions, with SINR duality carrying
/// the powers across. Divergence past the power cap is reported as
/// [`Status::InfeasibleAtCap`].
pub fn algorithm_b(net: &NetworkSpec, targets: &Targets, opts: &SolverOptions) -> Result<SolveReport> {
    if !net.is_white() {
        return Err(Error::Invalid("algorithm B expects a whitened network".into()));
    }
    let gamma0 = targets.sinr_targets(net)?;
    let counts = Targets::streams(net);
    let g0 = expand(&gamma0, &counts);
    let mut t = initial_vectors(net, &counts, &opts.init)?;
    let mut p: Vec<Vec<f64>> = counts.iter().map(|&m| vec![1.0; m]).collect();
    let mut trace = Vec::new();
    let mut prev = f64::NAN;
    let mut status = Status::MaxIters;
    let mut sigma_hat = None;
    for it in 1..=opts.max_iters {
        // forward: receivers, power control, dual reverse powers
        let r = mmse_sic_receivers(net, &t, &p)?;
        let gamma: Vec<f64> = forward_sinrs(net, &t, &r, &p)?.concat();
        let flat: Vec<f64> = p.concat();
        let updated: Vec<f64> = flat
            .iter()
            .zip(&gamma)
            .zip(&g0)
            .map(|((&pi, &gi), &ti)| if ti == 0.0 { 0.0 } else if gi > 0.0 { pi * ti / gi } else { pi * 2.0 })
            .collect();
        p = unflatten(&updated, &counts);
        let sigma = covariances(&t, &p, &net.forward_dims());
        let rec = forward_record(net, &sigma, it, opts.trace_residuals)?;
        let power = rec.sum_power;
        trace.push(rec);
        if !(power <= opts.power_cap) {
            status = Status::InfeasibleAtCap;
            break;
        }
        let achieved: Vec<f64> = forward_sinrs(net, &t, &r, &p)?.concat();
        let worst = achieved
            .iter()
            .zip(&g0)
            .filter(|(_, &t0)| t0 > 0.0)
            .map(|(&a, &t0)| (a / t0 - 1.0).abs())
            .fold(0.0, f64::max);
        if (power - prev).abs() <= opts.tol * power && worst <= opts.tol.sqrt() {
            status = Status::Converged;
            break;
        }
        prev = power;
        if it == opts.max_iters {
            break;
        }
        let psi = crosstalk(net, &t, &r)?;
        let gains = direct_gains(net, &t, &r)?;
        let q = match dual_powers(&DualScaling::new(&gains, &achieved)?, &psi.matrix) {
            Ok(q) => unflatten(&q, &counts),
            Err(_) => {
                status = Status::InfeasibleAtCap;
                break;
            }
        };
        // reverse: transmit vectors, power control, dual forward powers
        t = mmse_sic_transmitters(net, &r, &q)?;
        let gamma_hat: Vec<f64> = reverse_sinrs(net, &r, &t, &q)?.concat();
        let qf: Vec<f64> = q.concat();
        let q_new: Vec<f64> = qf
            .iter()
            .zip(&gamma_hat)
            .zip(&g0)
            .map(|((&qi, &gi), &ti)| if ti == 0.0 { 0.0 } else if gi > 0.0 { qi * ti / gi } else { qi * 2.0 })
            .collect();
        let q = unflatten(&q_new, &counts);
        let sh = covariances(&r, &q, &net.reverse_dims());
        trace.push(reverse_record(net, &sh, it, opts.trace_residuals)?);
        sigma_hat = Some(sh);
        let achieved_hat: Vec<f64> = reverse_sinrs(net, &r, &t, &q)?.concat();
        let psi = crosstalk(net, &t, &r)?;
        let gains = direct_gains(net, &t, &r)?;
        match primal_powers(&DualScaling::new(&gains, &achieved_hat)?, &psi.matrix) {
            Ok(pp) => p = unflatten(&pp, &counts),
            Err(_) => {
                status = Status::InfeasibleAtCap;
                break;
            }
        }
    }
    let sigma = covariances(&t, &p, &net.forward_dims());
    finish(net, status, trace, sigma, sigma_hat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::c;
    use crate::linalg::CMat;

    fn scalar(h: &[&[f64]], phi: &[&[f64]]) -> NetworkSpec {
        let n = h.len();
        NetworkSpec::new(
            (0..n).map(|l| (0..n).map(|k| CMat::from_element(1, 1, c(h[l][k], 0.0))).collect()).collect(),
            DMatrix::from_fn(n, n, |i, j| phi[i][j]),
        )
        .unwrap()
    }

    #[test]
    fn balancing_without_crosstalk() {
        let b = balance_powers(&[1.0, 1.0], &DMatrix::zeros(2, 2), 4.0).unwrap();
        assert!((b.powers[0] - 2.0).abs() < 1e-12 && (b.level - 2.0).abs() < 1e-12);
    }

    #[test]
    fn balanced_sum_and_equal_ratios() {
        let d = [0.5, 1.5, 0.8];
        let psi = DMatrix::from_row_slice(3, 3, &[0.0, 0.3, 0.1, 0.2, 0.0, 0.4, 0.6, 0.1, 0.0]);
        let b = balance_powers(&d, &psi, 5.0).unwrap();
        let sum: f64 = b.powers.iter().sum();
        assert!((sum - 5.0).abs() < 1e-9 * 5.0);
        for i in 0..3 {
            let interf: f64 = (0..3).map(|j| psi[(i, j)] * b.powers[j]).sum();
            let ratio = b.powers[i] / (d[i] * (1.0 + interf));
            assert!((ratio - b.level).abs() < 1e-8 * b.level);
        }
    }

    #[test]
    fn a_single_scalar_link() {
        let net = scalar(&[&[1.0]], &[&[0.0]]);
        let targets = Targets::new(vec![0.7]).unwrap();
        let rep = algorithm_a(&net, &targets, 3.0, &SolverOptions::default()).unwrap();
        assert!((rep.alpha.unwrap() - 4f64.ln() / 0.7).abs() < 1e-9);
        assert!((rep.sum_power - 3.0).abs() < 1e-9);
    }

    #[test]
    fn b_single_and_mac() {
        let net = scalar(&[&[1.0]], &[&[0.0]]);
        let rep = algorithm_b(&net, &Targets::new(vec![2f64.ln()]).unwrap(), &SolverOptions::default()).unwrap();
        assert_eq!(rep.status, Status::Converged);
        assert!((rep.sum_power - 1.0).abs() < 1e-6);
        let mac = scalar(&[&[1.0, 1.0], &[1.0, 1.0]], &[&[0.0, 1.0], &[0.0, 0.0]]);
        let rep = algorithm_b(&mac, &Targets::uniform(2, 2f64.ln()).unwrap(), &SolverOptions::default()).unwrap();
        assert_eq!(rep.status, Status::Converged);
        assert!((rep.sum_power - 3.0).abs() < 1e-4, "{}", rep.sum_power);
    }

    #[test]
    fn b_reports_infeasible_at_cap() {
        let ic = scalar(&[&[1.0, 1.0], &[1.0, 1.0]], &[&[0.0, 1.0], &[1.0, 0.0]]);
        let rep = algorithm_b(&ic, &Targets::uniform(2, 3f64.ln()).unwrap(), &SolverOptions::default()).unwrap();
        assert_eq!(rep.status, Status::InfeasibleAtCap);
    }
}
