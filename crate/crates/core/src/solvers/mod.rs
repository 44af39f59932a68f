//! Centralized solvers for max-min rate feasibility (FOP) and sum-power
//! minimization (SPMP).

mod optimality;
mod order;
mod polite;
mod sinr;

pub use optimality::{check_optimality, fit_alpha, OptimalityReport, Problem};
pub use order::{algorithm_o, reorder_by_levels, OrderSearch};
pub use polite::{algorithm_pr, algorithm_pr1, fop_via_pr1, pr1_half_forward, pr1_half_reverse};
pub use sinr::{algorithm_a, algorithm_b, balance_powers};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::rank;
use crate::netmodel::{link_rates, reverse_link_rates, reverse_network, CovarianceSet, NetworkSpec};
use crate::pwf::pwf_residual;

/// Per-link target rates in nats.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Targets {
    rates: Vec<f64>,
}

impl Targets {
    pub fn new(rates: Vec<f64>) -> Result<Self> {
        if let Some(bad) = rates.iter().find(|r| !(**r >= 0.0) || !r.is_finite()) {
            return Err(Error::Invalid(format!("target rate {bad}")));
        }
        Ok(Self { rates })
    }

    pub fn from_bits(bits: &[f64]) -> Result<Self> {
        Self::new(bits.iter().map(|b| b * std::f64::consts::LN_2).collect())
    }

    pub fn uniform(links: usize, rate: f64) -> Result<Self> {
        Self::new(vec![rate; links])
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn len(&self) -> usize {
        self.rates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rates.is_empty()
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self { rates: self.rates.iter().map(|r| r * alpha).collect() }
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self { rates: perm.iter().map(|&i| self.rates[i]).collect() }
    }

    pub fn check(&self, net: &NetworkSpec) -> Result<()> {
        if self.rates.len() != net.links() {
            return Err(Error::Dimension(format!(
                "{} targets for {} links",
                self.rates.len(),
                net.links()
            )));
        }
        Ok(())
    }

    /// Stream count per link: `M_l = rank(H_{l,l})`.
    pub fn streams(net: &NetworkSpec) -> Vec<usize> {
        (0..net.links()).map(|l| rank(net.channel(l, l))).collect()
    }

    /// Per-stream SINR target `e^{I_l/M_l} − 1` of each link.
    pub fn sinr_targets(&self, net: &NetworkSpec) -> Result<Vec<f64>> {
        self.check(net)?;
        Self::streams(net)
            .iter()
            .zip(&self.rates)
            .enumerate()
            .map(|(l, (&m, &r))| match (m, r > 0.0) {
                (0, true) => Err(Error::Infeasible(format!("link {l} has no direct channel but target {r}"))),
                (0, false) => Ok(0.0),
                _ => Ok((r / m as f64).exp_m1()),
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Converged,
    MaxIters,
    InfeasibleAtCap,
    OrderCycle,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Half {
    Forward,
    Reverse,
}

/// One record per half-iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    /// 1-based iteration the half belongs to.
    pub iteration: usize,
    pub half: Half,
    pub sum_power: f64,
    /// Per-link rates of the direction named by `half`, nats.
    pub rates: Vec<f64>,
    pub max_residual: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct SolveReport {
    pub status: Status,
    pub trace: Vec<TraceRecord>,
    pub sigma: CovarianceSet,
    pub sigma_hat: Option<CovarianceSet>,
    /// Water-filling level per link.
    pub nu: Vec<f64>,
    pub alpha: Option<f64>,
    pub c_max: Option<f64>,
    pub rates: Vec<f64>,
    pub sum_power: f64,
    /// Sweeps in which sum power rose after feasibility was reached.
    pub monotone_violations: usize,
}

impl SolveReport {
    pub fn half_steps(&self) -> usize {
        self.trace.len()
    }

    /// Iteration count in the "x.5" convention (two halves per iteration).
    pub fn iterations(&self) -> f64 {
        self.trace.len() as f64 / 2.0
    }

    pub fn meets(&self, targets: &Targets, tol: f64) -> bool {
        self.rates.iter().zip(targets.rates()).all(|(r, t)| *r >= t - tol)
    }
}

/// Starting point for the iterative solvers.
#[derive(Clone, Debug, Default)]
pub enum Init {
    /// Singular vectors (A, B) or scaled identity covariances (PR, PR1).
    #[default]
    Default,
    /// Random unit transmit vectors (A, B) or random covariances (PR, PR1),
    /// drawn from the solver stream of the given seed.
    Random(u64),
    /// Explicit covariances: forward for PR, reverse for PR1.
    Covariances(CovarianceSet),
}

#[derive(Clone, Debug)]
pub struct SolverOptions {
    pub max_iters: usize,
    /// Relative change of the objective that counts as converged.
    pub tol: f64,
    /// Absolute rate tolerance (nats) required on convergence.
    pub rate_tol: f64,
    pub power_cap: f64,
    pub trace_residuals: bool,
    pub init: Init,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iters: 500,
            tol: 1e-8,
            rate_tol: 1e-7,
            power_cap: 1e6,
            trace_residuals: true,
            init: Init::Default,
        }
    }
}

pub(crate) fn forward_record(
    net: &NetworkSpec,
    sigma: &CovarianceSet,
    iteration: usize,
    residuals: bool,
) -> Result<TraceRecord> {
    let rates = link_rates(net, sigma)?;
    let max_residual = if residuals { Some(max_of(&pwf_residual(net, sigma)?)) } else { None };
    Ok(TraceRecord {
        iteration,
        half: Half::Forward,
        sum_power: net.weighted_power(sigma),
        rates,
        max_residual,
    })
}

pub(crate) fn reverse_record(
    net: &NetworkSpec,
    sigma_hat: &CovarianceSet,
    iteration: usize,
    residuals: bool,
) -> Result<TraceRecord> {
    let rates = reverse_link_rates(net, sigma_hat)?;
    let max_residual = if residuals {
        Some(max_of(&pwf_residual(&reverse_network(net), sigma_hat)?))
    } else {
        None
    };
    Ok(TraceRecord {
        iteration,
        half: Half::Reverse,
        sum_power: net.reverse_weighted_power(sigma_hat),
        rates,
        max_residual,
    })
}

pub(crate) fn max_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(0.0, f64::max)
}

pub(crate) fn rate_gap(rates: &[f64], targets: &Targets) -> f64 {
    rates.iter().zip(targets.rates()).map(|(r, t)| (r - t).abs()).fold(0.0, f64::max)
}

/// Runs `solve` from `starts` random initial points (seeded `seed, seed+1, …`)
/// plus the default start and keeps the best report: lowest sum power among
/// target-meeting SPMP runs, or highest `alpha` for FOP runs.
pub fn multistart(
    starts: usize,
    seed: u64,
    problem: Problem,
    targets: &Targets,
    mut solve: impl FnMut(Init) -> Result<SolveReport>,
) -> Result<SolveReport> {
    let mut best: Option<SolveReport> = None;
    let mut last_err = None;
    let inits = std::iter::once(Init::Default).chain((0..starts as u64).map(|i| Init::Random(seed.wrapping_add(i))));
    for init in inits {
        match solve(init) {
            Ok(rep) => {
                let better = match &best {
                    None => true,
                    Some(b) => problem.better(&rep, b, targets),
                };
                if better {
                    best = Some(rep);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| last_err.unwrap_or(Error::Invalid("no starts".into())))
}
