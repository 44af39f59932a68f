use serde::{Deserialize, Serialize};

use super::{SolveReport, Status, Targets};
use crate::error::Result;
use crate::netmodel::{link_rates, CovarianceSet, NetworkSpec};
use crate::pwf::pwf_fits;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Problem {
    Spmp,
    Fop { total_power: f64 },
}

impl Problem {
    /// Whether `a` is a better solution than `b`.
    pub(crate) fn better(&self, a: &SolveReport, b: &SolveReport, targets: &Targets) -> bool {
        match self {
            Problem::Spmp => {
                let ok = |r: &SolveReport| r.status != Status::InfeasibleAtCap && r.meets(targets, 1e-6);
                match (ok(a), ok(b)) {
                    (true, false) => true,
                    (false, true) => false,
                    _ => a.sum_power < b.sum_power,
                }
            }
            Problem::Fop { .. } => a.alpha.unwrap_or(0.0) > b.alpha.unwrap_or(0.0),
        }
    }

    /// Scalar cost, lower is better.
    pub fn cost(&self, rep: &SolveReport, targets: &Targets) -> f64 {
        match self {
            Problem::Spmp => {
                if rep.status == Status::InfeasibleAtCap || !rep.meets(targets, 1e-6) {
                    f64::INFINITY
                } else {
                    rep.sum_power
                }
            }
            Problem::Fop { .. } => -rep.alpha.unwrap_or(0.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimalityReport {
    pub residuals: Vec<f64>,
    pub max_residual: f64,
    pub alpha: f64,
    /// `max_l |I_l − α I⁰_l|`, nats.
    pub rate_error: f64,
    /// `|Σ Tr(Σ_l) − P_T|` for FOP.
    pub power_error: Option<f64>,
    pub nu: Vec<f64>,
}

impl OptimalityReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_residual <= tol && self.rate_error <= tol && self.power_error.is_none_or(|e| e <= tol)
    }
}

/// `min_l I_l / I⁰_l` over links with positive targets.
pub(crate) fn fit_alpha_min(rates: &[f64], targets: &Targets) -> f64 {
    rates
        .iter()
        .zip(targets.rates())
        .filter(|(_, &t)| t > 0.0)
        .map(|(r, t)| r / t)
        .fold(f64::INFINITY, f64::min)
}

/// The `α` minimizing `max_l |I_l − α I⁰_l|`. The objective is convex and
/// piecewise linear, so its minimum sits at a single-link ratio or at a
/// crossing of two links' error lines.
pub fn fit_alpha(rates: &[f64], targets: &Targets) -> f64 {
    let t = targets.rates();
    let err = |a: f64| rates.iter().zip(t).map(|(r, x)| (r - a * x).abs()).fold(0.0, f64::max);
    let mut cands: Vec<f64> = Vec::new();
    for i in 0..t.len() {
        if t[i] > 0.0 {
            cands.push(rates[i] / t[i]);
        }
        for j in 0..t.len() {
            if t[i] + t[j] > 0.0 {
                cands.push((rates[i] + rates[j]) / (t[i] + t[j]));
            }
        }
    }
    cands.into_iter().fold((1.0, f64::INFINITY), |(ba, be), a| {
        let e = err(a);
        if e < be { (a, e) } else { (ba, be) }
    })
    .0
}

/// Necessary optimality conditions: polite water-filling residual per link,
/// rates on the ray `α I⁰` (with `α = 1` for SPMP), and the full budget used
/// for FOP. Never fails on a merely suboptimal point.
pub fn check_optimality(net: &NetworkSpec, sigma: &CovarianceSet, targets: &Targets, problem: Problem) -> Result<OptimalityReport> {
    targets.check(net)?;
    let fits = pwf_fits(net, sigma)?;
    let residuals: Vec<f64> = fits.iter().map(|f| f.residual).collect();
    let rates = link_rates(net, sigma)?;
    let alpha = match problem {
        Problem::Spmp => 1.0,
        Problem::Fop { .. } => fit_alpha(&rates, targets),
    };
    let rate_error = rates
        .iter()
        .zip(targets.rates())
        .map(|(r, t)| (r - alpha * t).abs())
        .fold(0.0, f64::max);
    let power_error = match problem {
        Problem::Spmp => None,
        Problem::Fop { total_power } => Some((net.weighted_power(sigma) - total_power).abs()),
    };
    Ok(OptimalityReport {
        max_residual: residuals.iter().copied().fold(0.0, f64::max),
        residuals,
        alpha,
        rate_error,
        power_error,
        nu: fits.iter().map(|f| f.nu).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c, real_diag, CMat};
    use nalgebra::DMatrix;

    #[test]
    fn alpha_fits() {
        let t = Targets::new(vec![1.0, 2.0]).unwrap();
        assert!((fit_alpha(&[0.5, 1.0], &t) - 0.5).abs() < 1e-15);
        // errors |1 − a| and |1 − 2a| balance at a = 2/3
        assert!((fit_alpha(&[1.0, 1.0], &t) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(fit_alpha_min(&[1.0, 1.0], &t), 0.5);
    }

    #[test]
    fn infeasible_point_reports_without_error() {
        let net = NetworkSpec::new(vec![vec![real_diag(&[2.0, 1.0])]], DMatrix::zeros(1, 1)).unwrap();
        let sigma = CovarianceSet::new(vec![CMat::identity(2, 2) * c(0.1, 0.0)]).unwrap();
        let rep = check_optimality(&net, &sigma, &Targets::new(vec![3.0]).unwrap(), Problem::Spmp).unwrap();
        assert!(rep.max_residual > 0.0 && rep.rate_error > 0.0);
        assert!(!rep.passes(1e-6));
        let fop = check_optimality(&net, &sigma, &Targets::new(vec![3.0]).unwrap(), Problem::Fop { total_power: 1.0 }).unwrap();
        assert!((fop.power_error.unwrap() - 0.8).abs() < 1e-12);
    }
}
