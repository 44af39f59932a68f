//! Running scenarios: single runs, seed batches, rate-region sweeps and
//! optimality checks of saved runs.

use std::f64::consts::LN_2;

use bmac_core::distsim::{run_prd, Estimation, PrdOptions};
use bmac_core::netmodel::{whiten, CovarianceSet, EncodingOrder, NetworkSpec};
use bmac_core::solvers::{
    algorithm_a, algorithm_b, algorithm_o, algorithm_pr, algorithm_pr1, check_optimality, fop_via_pr1, multistart,
    Half, Init, OptimalityReport, Problem, SolveReport, SolverOptions, Status, Targets,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::scenario::{MatrixJson, OrderJson, RunOptions, Scenario, SolverKind};
use crate::{db, HarnessError, Result};

/// Rates count as meeting their targets within this many bits.
pub const RATE_SLACK_BITS: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub half_step: usize,
    pub iteration: usize,
    pub half: Half,
    pub sum_power: f64,
    pub sum_power_db: f64,
    pub rates_bits: Vec<f64>,
    pub max_residual: Option<f64>,
    /// Per-link transmit power and cap flags (PRD only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub powers: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capped: Option<Vec<bool>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub status: Status,
    pub sum_power: f64,
    pub sum_power_db: f64,
    pub rates_bits: Vec<f64>,
    pub targets_bits: Vec<f64>,
    pub meets_targets: bool,
    pub alpha: Option<f64>,
    pub c_max: Option<f64>,
    pub nu: Vec<f64>,
    pub iterations: f64,
    pub half_steps: usize,
    pub monotone_violations: usize,
    pub order: Option<OrderJson>,
    pub covariances: Vec<MatrixJson>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub scenario: Scenario,
    pub scenario_hash: String,
    pub seed: u64,
    pub solver: SolverKind,
    #[serde(default, skip_serializing)]
    pub trace: Vec<TraceRow>,
    pub summary: Summary,
}

/// SHA-256 of the scenario's canonical JSON.
pub fn scenario_hash(s: &Scenario) -> Result<String> {
    Ok(hex::encode(Sha256::digest(serde_json::to_vec(s)?)))
}

fn solver_options(o: &RunOptions, init: Init) -> SolverOptions {
    SolverOptions {
        max_iters: o.max_iters,
        tol: o.tol,
        rate_tol: o.rate_tol,
        power_cap: o.power_cap,
        trace_residuals: o.trace_residuals,
        init,
    }
}

fn problem(s: &Scenario) -> Problem {
    match (s.solver.is_fop(), s.options.total_power) {
        (true, Some(p)) => Problem::Fop { total_power: p },
        _ => Problem::Spmp,
    }
}

fn solve_white(kind: SolverKind, net: &NetworkSpec, targets: &Targets, o: &RunOptions, init: Init) -> bmac_core::Result<SolveReport> {
    let so = solver_options(o, init);
    let budget = o.total_power.unwrap_or(0.0);
    match kind {
        SolverKind::A => algorithm_a(net, targets, budget, &so),
        SolverKind::B => algorithm_b(net, targets, &so),
        SolverKind::Pr => algorithm_pr(net, targets, &so),
        SolverKind::Pr1 => algorithm_pr1(net, targets, &so),
        SolverKind::FopPr1 => fop_via_pr1(net, targets, budget, &so),
        SolverKind::Prd => Err(bmac_core::Error::Invalid("PRD runs through run_prd".into())),
    }
}

/// Solves on the whitened network and maps covariances back.
fn solve_any(kind: SolverKind, net: &NetworkSpec, targets: &Targets, o: &RunOptions, init: Init) -> bmac_core::Result<SolveReport> {
    if net.is_white() {
        return solve_white(kind, net, targets, o, init);
    }
    let (white, maps) = whiten(net)?;
    let init = match init {
        Init::Covariances(s) if kind == SolverKind::Pr => Init::Covariances(maps.forward_to_white(&s)),
        Init::Covariances(s) => Init::Covariances(maps.reverse_to_white(&s)),
        other => other,
    };
    let mut rep = solve_white(kind, &white, targets, o, init)?;
    rep.sigma = maps.forward_from_white(&rep.sigma);
    rep.sigma_hat = rep.sigma_hat.map(|s| maps.reverse_from_white(&s));
    Ok(rep)
}

fn solve_starts(s: &Scenario, net: &NetworkSpec, targets: &Targets) -> bmac_core::Result<SolveReport> {
    let o = &s.options;
    if o.multistart > 0 {
        multistart(o.multistart, s.seed, problem(s), targets, |init| solve_any(s.solver, net, targets, o, init))
    } else {
        let init = if o.random_init { Init::Random(s.seed) } else { Init::Default };
        solve_any(s.solver, net, targets, o, init)
    }
}

fn bits(nats: &[f64]) -> Vec<f64> {
    nats.iter().map(|r| r / LN_2).collect()
}

fn meets(rates_bits: &[f64], targets_bits: &[f64]) -> bool {
    rates_bits.iter().zip(targets_bits).all(|(r, t)| *r >= t - RATE_SLACK_BITS)
}

fn record(s: &Scenario, report: SolveReport, order: Option<EncodingOrder>, extra: Option<Vec<(Vec<f64>, Vec<bool>)>>) -> Result<RunRecord> {
    let mut trace: Vec<TraceRow> = report
        .trace
        .iter()
        .enumerate()
        .map(|(i, t)| TraceRow {
            half_step: i + 1,
            iteration: t.iteration,
            half: t.half,
            sum_power: t.sum_power,
            sum_power_db: db(t.sum_power),
            rates_bits: bits(&t.rates),
            max_residual: t.max_residual,
            powers: None,
            capped: None,
        })
        .collect();
    if let Some(extra) = extra {
        for (row, (p, c)) in trace.iter_mut().zip(extra) {
            row.powers = Some(p);
            row.capped = Some(c);
        }
    }
    let rates_bits = bits(&report.rates);
    let summary = Summary {
        status: report.status,
        sum_power: report.sum_power,
        sum_power_db: db(report.sum_power),
        meets_targets: meets(&rates_bits, &s.targets_bits),
        rates_bits,
        targets_bits: s.targets_bits.clone(),
        alpha: report.alpha,
        c_max: report.c_max,
        nu: report.nu.clone(),
        iterations: report.iterations(),
        half_steps: report.half_steps(),
        monotone_violations: report.monotone_violations,
        order: order.as_ref().map(OrderJson::from),
        covariances: report.sigma.iter().map(MatrixJson::from_mat).collect(),
    };
    Ok(RunRecord { scenario_hash: scenario_hash(s)?, seed: s.seed, solver: s.solver, scenario: s.clone(), trace, summary })
}

/// Runs one scenario. Deterministic in the scenario (including its seed).
pub fn run(s: &Scenario) -> Result<RunRecord> {
    s.validate()?;
    let targets = s.targets()?;
    let o = &s.options;
    if s.solver == SolverKind::Prd {
        let net = s.network()?;
        let opts = PrdOptions {
            half_rounds: (o.rounds * 2.0).round() as usize,
            p_max: o.pmax.map(|p| vec![p; net.links()]),
            beta: o.beta,
            estimation: o.estimation_samples.map(|samples| Estimation { samples, seed: s.seed }),
        };
        let out = run_prd(&net, &targets, &opts)?;
        let extra = out.rounds.into_iter().map(|r| (r.powers, r.capped)).collect();
        return record(s, out.report, None, Some(extra));
    }
    if o.order_opt {
        let (base, initial) = s.base_network()?;
        let search = algorithm_o(&base, &targets, problem(s), initial, o.order_passes, |n| solve_starts(s, n, &targets))?;
        return record(s, search.report, Some(search.order), None);
    }
    let net = s.network()?;
    record(s, solve_starts(s, &net, &targets)?, None, None)
}

/// Runs the scenario once per seed, in parallel, keeping every outcome.
pub fn run_many(s: &Scenario, seeds: &[u64]) -> Vec<(u64, Result<RunRecord>)> {
    seeds
        .par_iter()
        .map(|&seed| {
            let mut one = s.clone();
            one.seed = seed;
            (seed, run(&one))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub status: Option<Status>,
    pub sum_power: Option<f64>,
    pub sum_power_db: Option<f64>,
    pub min_rate_bits: Option<f64>,
    pub meets_targets: bool,
    pub iterations: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub scenario_hash: String,
    pub solver: SolverKind,
    pub runs: usize,
    pub failures: usize,
    pub met_all_targets: usize,
    pub mean_sum_power: Option<f64>,
    pub mean_sum_power_db: Option<f64>,
    pub p10_sum_power_db: Option<f64>,
    pub p50_sum_power_db: Option<f64>,
    pub p90_sum_power_db: Option<f64>,
    pub outcomes: Vec<SeedOutcome>,
}

/// Nearest-rank percentile of sorted data.
fn percentile(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    Some(sorted[rank.min(sorted.len()) - 1])
}

/// Batch over seeds. Solver errors are recorded per seed and never abort
/// the batch.
pub fn batch(s: &Scenario, seeds: &[u64]) -> Result<BatchSummary> {
    let outcomes: Vec<SeedOutcome> = run_many(s, seeds)
        .into_iter()
        .map(|(seed, r)| match r {
            Ok(rec) => SeedOutcome {
                seed,
                status: Some(rec.summary.status),
                sum_power: Some(rec.summary.sum_power),
                sum_power_db: Some(rec.summary.sum_power_db),
                min_rate_bits: rec.summary.rates_bits.iter().copied().reduce(f64::min),
                meets_targets: rec.summary.meets_targets,
                iterations: Some(rec.summary.iterations),
                error: None,
            },
            Err(e) => SeedOutcome {
                seed,
                status: None,
                sum_power: None,
                sum_power_db: None,
                min_rate_bits: None,
                meets_targets: false,
                iterations: None,
                error: Some(e.to_string()),
            },
        })
        .collect();
    let powers: Vec<f64> = outcomes.iter().filter_map(|o| o.sum_power).collect();
    let mut dbs: Vec<f64> = outcomes.iter().filter_map(|o| o.sum_power_db).collect();
    dbs.sort_by(f64::total_cmp);
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    Ok(BatchSummary {
        scenario_hash: scenario_hash(s)?,
        solver: s.solver,
        runs: outcomes.len(),
        failures: outcomes.iter().filter(|o| o.error.is_some()).count(),
        met_all_targets: outcomes.iter().filter(|o| o.meets_targets).count(),
        mean_sum_power: mean(&powers),
        mean_sum_power_db: mean(&dbs),
        p10_sum_power_db: percentile(&dbs, 10.0),
        p50_sum_power_db: percentile(&dbs, 50.0),
        p90_sum_power_db: percentile(&dbs, 90.0),
        outcomes,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionPoint {
    pub theta: f64,
    pub direction_bits: Vec<f64>,
    pub alpha: Option<f64>,
    pub rates_bits: Vec<f64>,
    pub sum_power: f64,
    pub status: Status,
}

/// Sweeps target rays between the first two links with a FOP solver: ray
/// `i` scales link 0's target by `cos θ_i` and link 1's by `sin θ_i`, with
/// `θ_i` at the midpoints of `rays` equal slices of `(0, π/2)`.
pub fn region(s: &Scenario, rays: usize) -> Result<Vec<RegionPoint>> {
    if !s.solver.is_fop() || s.links() < 2 || rays == 0 {
        return Err(HarnessError::Schema("region needs a FOP solver, two or more links and one or more rays".into()));
    }
    (0..rays)
        .into_par_iter()
        .map(|i| {
            let theta = (i as f64 + 0.5) / rays as f64 * std::f64::consts::FRAC_PI_2;
            let mut ray = s.clone();
            ray.targets_bits[0] *= theta.cos();
            ray.targets_bits[1] *= theta.sin();
            let rec = run(&ray)?;
            Ok(RegionPoint {
                theta,
                direction_bits: ray.targets_bits,
                alpha: rec.summary.alpha,
                rates_bits: rec.summary.rates_bits,
                sum_power: rec.summary.sum_power,
                status: rec.summary.status,
            })
        })
        .collect()
}

/// Re-checks a saved run's covariances against the optimality conditions.
pub fn check(rec: &RunRecord) -> Result<OptimalityReport> {
    let mut net = rec.scenario.network()?;
    if let Some(order) = &rec.summary.order {
        net = rec.scenario.base_network()?.0.with_order(&order.into())?;
    }
    let sigma = CovarianceSet::new(rec.summary.covariances.iter().map(MatrixJson::to_mat).collect::<Result<_>>()?)?;
    Ok(check_optimality(&net, &sigma, &rec.scenario.targets()?, problem(&rec.scenario))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{preset, NetworkSource, Topology, SCHEMA_VERSION};

    fn single_link(solver: SolverKind, bits: f64) -> Scenario {
        Scenario {
            version: SCHEMA_VERSION,
            name: "single".into(),
            seed: 1,
            network: NetworkSource::Inline {
                channels: vec![vec![MatrixJson { rows: 1, cols: 1, re: vec![1.0], im: vec![0.0] }]],
                noise: None,
                weights: None,
                topology: Topology { coupling: vec![vec![0.0]], tx_nodes: None, rx_nodes: None, order: None },
            },
            targets_bits: vec![bits],
            solver,
            options: RunOptions::default(),
        }
    }

    #[test]
    fn single_link_every_solver() {
        // 2 bits on a unit scalar channel cost e^{I0} − 1 = 3
        for kind in [SolverKind::B, SolverKind::Pr, SolverKind::Pr1, SolverKind::Prd] {
            let rec = run(&single_link(kind, 2.0)).unwrap();
            assert!((rec.summary.sum_power - 3.0).abs() < 1e-6, "{kind:?} {}", rec.summary.sum_power);
            assert!(rec.summary.meets_targets);
        }
    }

    #[test]
    fn runs_are_reproducible() {
        let s = preset("ic3", 7).unwrap();
        let a = run(&s).unwrap();
        let b = run(&s).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert_eq!(a.trace, b.trace);
    }

    #[test]
    fn percentiles() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(percentile(&v, 50.0), Some(2.0));
        assert_eq!(percentile(&v, 90.0), Some(4.0));
        assert_eq!(percentile(&[], 50.0), None);
    }

    #[test]
    fn batch_records_failures() {
        let mut s = preset("ic3", 0).unwrap();
        s.options.max_iters = 3;
        s.solver = SolverKind::Pr;
        let b = batch(&s, &[0, 1]).unwrap();
        assert_eq!((b.runs, b.failures), (2, 2));
    }

    #[test]
    fn colored_noise_is_whitened() {
        let mut s = single_link(SolverKind::Pr1, 1.0);
        if let NetworkSource::Inline { noise, .. } = &mut s.network {
            *noise = Some(vec![MatrixJson { rows: 1, cols: 1, re: vec![0.5], im: vec![0.0] }]);
        }
        let rec = run(&s).unwrap();
        // SNR doubles, so power halves: (2^1 − 1) / 2
        assert!((rec.summary.sum_power - 0.5).abs() < 1e-9);
        let report = check(&rec).unwrap();
        assert!(report.passes(1e-6));
    }
}
