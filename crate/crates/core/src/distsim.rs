//! Distributed polite water-filling (PRD): transmitter and receiver agents
//! that only see their own direct link through pilots, their own measured
//! interference, and their own power cap.
//!
//! The simulated radio environment owns the network and the current
//! covariances. Agents obtain everything through it, and every read is
//! logged so locality can be checked.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{hermitize, identity, inv_sqrtm, random_cn, sqrtm, thin_svd, trace_re, CMat};
use crate::netmodel::{
    interference_covariance, link_rates, reverse_interference_covariance, reverse_link_rates, CovarianceSet,
    NetworkSpec,
};
use crate::pwf::{assemble, trace_weights, waterfill_rate, waterfill_weighted, PwfDecomposition};
use crate::rng::{stream_rng, STREAM_ESTIMATION};
use crate::solvers::{Half, SolveReport, Status, Targets, TraceRecord};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Agent {
    Tx(usize),
    Rx(usize),
}

/// What an agent read from the environment, always tagged with a link.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Access {
    /// Interference-plus-noise covariance at the agent's own antennas.
    Interference(usize),
    /// Pilot through the direct channel of a link, pre-shaped by its partner.
    EffectiveChannel(usize),
}

impl Access {
    pub fn link(&self) -> usize {
        match *self {
            Access::Interference(l) | Access::EffectiveChannel(l) => l,
        }
    }
}

/// Sample-covariance estimation error for the interference measurements.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimation {
    /// Pilot snapshots per estimate; must be at least the antenna count.
    pub samples: usize,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct PrdOptions {
    /// Half rounds to run; odd counts end on a forward half ("x.5 rounds").
    pub half_rounds: usize,
    /// Per-link transmit power cap, `None` for uncapped.
    pub p_max: Option<Vec<f64>>,
    /// Target inflation `β ≥ 1`.
    pub beta: f64,
    pub estimation: Option<Estimation>,
}

impl Default for PrdOptions {
    fn default() -> Self {
        Self { half_rounds: 7, p_max: None, beta: 1.0, estimation: None }
    }
}

/// Transmitter-side view of a link.
#[derive(Clone, Debug)]
pub struct TxAgent {
    pub link: usize,
    pub sigma: CMat,
    /// Last estimate of the reverse interference covariance.
    pub omega_hat: CMat,
    /// `H† Ω^{-1/2}` as learned from the receiver's reverse pilots.
    pub reverse_channel: CMat,
    pub cap: Option<f64>,
}

/// Receiver-side view of a link.
#[derive(Clone, Debug)]
pub struct RxAgent {
    pub link: usize,
    pub sigma_hat: CMat,
    /// Last estimate of the forward interference covariance.
    pub omega: CMat,
    /// `H Ω̂^{-1/2}` as learned from the transmitter's forward pilots.
    pub forward_channel: CMat,
}

/// Per half round: rates in nats of that direction, per-link powers and
/// which transmitters hit their caps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub half_round: usize,
    pub half: Half,
    pub rates: Vec<f64>,
    pub powers: Vec<f64>,
    pub capped: Vec<bool>,
}

#[derive(Clone, Debug)]
pub struct PrdRun {
    pub report: SolveReport,
    pub rounds: Vec<RoundRecord>,
    pub access_log: Vec<(Agent, Access)>,
}

struct Environment<'a> {
    net: &'a NetworkSpec,
    sigma: CovarianceSet,
    sigma_hat: CovarianceSet,
    log: Vec<(Agent, Access)>,
    estimation: Option<(usize, rand_chacha::ChaCha20Rng)>,
}

impl Environment<'_> {
    fn estimate(&mut self, truth: CMat) -> CMat {
        let Some((samples, rng)) = self.estimation.as_mut() else { return truth };
        let n = truth.nrows();
        let root = sqrtm(&truth);
        let y = &root * random_cn(rng, n, *samples);
        hermitize(&(&y * y.adjoint() / crate::linalg::c(*samples as f64, 0.0)))
    }

    fn forward_interference(&mut self, l: usize) -> Result<CMat> {
        self.log.push((Agent::Rx(l), Access::Interference(l)));
        let truth = interference_covariance(self.net, &self.sigma, l)?;
        Ok(self.estimate(truth))
    }

    fn reverse_interference(&mut self, l: usize) -> Result<CMat> {
        self.log.push((Agent::Tx(l), Access::Interference(l)));
        let truth = reverse_interference_covariance(self.net, &self.sigma_hat, l)?;
        Ok(self.estimate(truth))
    }

    /// `H_{l,l} S` seen by receiver `l` when transmitter `l` shapes pilots by `S`.
    fn forward_pilot(&mut self, l: usize, shaping: &CMat) -> CMat {
        self.log.push((Agent::Rx(l), Access::EffectiveChannel(l)));
        self.net.channel(l, l) * shaping
    }

    /// `H_{l,l}† S` seen by transmitter `l` when receiver `l` shapes pilots by `S`.
    fn reverse_pilot(&mut self, l: usize, shaping: &CMat) -> CMat {
        self.log.push((Agent::Tx(l), Access::EffectiveChannel(l)));
        self.net.channel(l, l).adjoint() * shaping
    }
}

impl TxAgent {
    fn update(&mut self, target: f64) -> Result<(PwfDecomposition, bool)> {
        let ohi = inv_sqrtm(&self.omega_hat);
        let hbar = self.reverse_channel.adjoint() * &ohi;
        let svd = thin_svd(&hbar);
        let delta: Vec<f64> = svd.s.iter().map(|s| s * s).collect();
        let mut wf = waterfill_rate(&delta, target)?;
        let mut capped = false;
        if let Some(cap) = self.cap {
            let w = trace_weights(&svd.v, &ohi);
            let used: f64 = w.iter().zip(&wf.d).map(|(a, b)| a * b).sum();
            if used > cap {
                wf = waterfill_weighted(&delta, &w, cap)?;
                capped = true;
            }
        }
        self.sigma = assemble(&svd.v, &ohi, &wf.d);
        Ok((wf, capped))
    }
}

impl RxAgent {
    fn update(&mut self, target: f64) -> Result<PwfDecomposition> {
        let oi = inv_sqrtm(&self.omega);
        let hbar = &oi * &self.forward_channel;
        let svd = thin_svd(&hbar);
        let delta: Vec<f64> = svd.s.iter().map(|s| s * s).collect();
        let wf = waterfill_rate(&delta, target)?;
        self.sigma_hat = assemble(&svd.u, &oi, &wf.d);
        Ok(wf)
    }
}

/// Runs PRD from `Ω = Ω̂ = I`. Forward half `i` water-fills over
/// `Ω^{(i-1)} , Ω̂^{(i-1)}`; the following reverse half uses the fresh
/// `Ω^{(i)}` with the same `Ω̂^{(i-1)}`. Rates that miss their targets are
/// reported, not treated as errors.
pub fn run_prd(net: &NetworkSpec, targets: &Targets, opts: &PrdOptions) -> Result<PrdRun> {
    if !net.is_white() {
        return Err(Error::Invalid("PRD expects a whitened network".into()));
    }
    targets.check(net)?;
    if opts.half_rounds == 0 {
        return Err(Error::Invalid("PRD needs at least one half round".into()));
    }
    if !(opts.beta >= 1.0) {
        return Err(Error::Invalid(format!("target scale {}", opts.beta)));
    }
    let links = net.links();
    if let Some(caps) = &opts.p_max {
        if caps.len() != links || caps.iter().any(|c| !(*c > 0.0)) {
            return Err(Error::Invalid("one positive power cap per link".into()));
        }
    }
    let (tx_dims, rx_dims) = (net.forward_dims(), net.reverse_dims());
    if let Some(e) = opts.estimation {
        let need = tx_dims.iter().chain(&rx_dims).copied().max().unwrap_or(0);
        if e.samples < need {
            return Err(Error::Invalid(format!("{} pilot samples for {need} antennas", e.samples)));
        }
    }
    let inflated = targets.scaled(opts.beta);

    let mut env = Environment {
        net,
        sigma: CovarianceSet::zeros(&tx_dims),
        sigma_hat: CovarianceSet::zeros(&rx_dims),
        log: Vec::new(),
        estimation: opts.estimation.map(|e| (e.samples, stream_rng(e.seed, STREAM_ESTIMATION))),
    };
    let mut txs: Vec<TxAgent> = (0..links)
        .map(|l| TxAgent {
            link: l,
            sigma: CMat::zeros(tx_dims[l], tx_dims[l]),
            omega_hat: identity(tx_dims[l]),
            reverse_channel: net.channel(l, l).adjoint(),
            cap: opts.p_max.as_ref().map(|c| c[l]),
        })
        .collect();
    let mut rxs: Vec<RxAgent> = (0..links)
        .map(|l| RxAgent {
            link: l,
            sigma_hat: CMat::zeros(rx_dims[l], rx_dims[l]),
            omega: identity(rx_dims[l]),
            forward_channel: net.channel(l, l).clone(),
        })
        .collect();

    let mut rounds = Vec::with_capacity(opts.half_rounds);
    let mut trace = Vec::with_capacity(opts.half_rounds);
    let mut levels = vec![0.0; links];
    let mut powers_prev = f64::NAN;
    let mut settled = false;
    for h in 0..opts.half_rounds {
        let iteration = h / 2 + 1;
        if h % 2 == 0 {
            let mut capped = vec![false; links];
            for tx in txs.iter_mut() {
                let (wf, hit) = tx.update(inflated.rates()[tx.link])?;
                levels[tx.link] = wf.nu;
                capped[tx.link] = hit;
            }
            env.sigma = CovarianceSet::from_hermitian(txs.iter().map(|t| t.sigma.clone()).collect());
            for rx in rxs.iter_mut() {
                let shaping = inv_sqrtm(&txs[rx.link].omega_hat);
                rx.forward_channel = env.forward_pilot(rx.link, &shaping);
                rx.omega = env.forward_interference(rx.link)?;
            }
            let rates = link_rates(net, &env.sigma)?;
            let powers: Vec<f64> = txs.iter().map(|t| trace_re(&t.sigma)).collect();
            let sum: f64 = powers.iter().sum();
            settled = (sum - powers_prev).abs() <= 1e-8 * sum;
            powers_prev = sum;
            trace.push(TraceRecord { iteration, half: Half::Forward, sum_power: sum, rates: rates.clone(), max_residual: None });
            rounds.push(RoundRecord { half_round: h + 1, half: Half::Forward, rates, powers, capped });
        } else {
            for rx in rxs.iter_mut() {
                rx.update(inflated.rates()[rx.link])?;
            }
            env.sigma_hat = CovarianceSet::from_hermitian(rxs.iter().map(|r| r.sigma_hat.clone()).collect());
            for tx in txs.iter_mut() {
                let shaping = inv_sqrtm(&rxs[tx.link].omega);
                tx.reverse_channel = env.reverse_pilot(tx.link, &shaping);
                tx.omega_hat = env.reverse_interference(tx.link)?;
            }
            let rates = reverse_link_rates(net, &env.sigma_hat)?;
            let powers: Vec<f64> = rxs.iter().map(|r| trace_re(&r.sigma_hat)).collect();
            trace.push(TraceRecord {
                iteration,
                half: Half::Reverse,
                sum_power: powers.iter().sum(),
                rates: rates.clone(),
                max_residual: None,
            });
            rounds.push(RoundRecord { half_round: h + 1, half: Half::Reverse, rates, powers, capped: vec![false; links] });
        }
    }

    let rates = link_rates(net, &env.sigma)?;
    let meets = rates.iter().zip(inflated.rates()).all(|(r, t)| *r >= t - 1e-6);
    let report = SolveReport {
        status: if settled && meets { Status::Converged } else { Status::MaxIters },
        sum_power: net.weighted_power(&env.sigma),
        sigma: env.sigma,
        sigma_hat: Some(env.sigma_hat),
        nu: levels,
        alpha: None,
        c_max: None,
        rates,
        trace,
        monotone_violations: 0,
    };
    Ok(PrdRun { report, rounds, access_log: env.log })
}
