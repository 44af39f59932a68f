use std::path::PathBuf;

use anyhow::{bail, Context};
use bmac_harness::output::{write_batch, write_region, write_run};
use bmac_harness::{batch, check, preset, region, run, RunRecord, Scenario, SolverKind, PRESETS};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bmac", version, about = "Rate-constrained power minimization and max-min rate balancing for MIMO B-MAC networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its trace and summary.
    Solve(Common),
    /// Run a scenario over consecutive seeds starting at --seed.
    Batch {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 100)]
        seeds: u64,
    },
    /// Sweep target rays between links 0 and 1 with a FOP solver.
    Region {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 16)]
        rays: usize,
    },
    /// Check a saved summary.json against the optimality conditions.
    Check {
        /// summary.json written by `solve`.
        input: PathBuf,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
    },
}

#[derive(Args)]
struct Common {
    /// Built-in scenario name.
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// Scenario JSON file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    solver: Option<SolverKind>,
    /// Improve the encode/decode order inside pseudo BC/MAC groups.
    #[arg(long)]
    order_opt: bool,
    /// Extra random starts; the best result is kept.
    #[arg(long)]
    multistart: Option<usize>,
    /// Start from random vectors/covariances.
    #[arg(long)]
    random_init: bool,
    /// PRD training rounds in halves, e.g. 3.5.
    #[arg(long)]
    rounds: Option<f64>,
    /// PRD target inflation.
    #[arg(long)]
    beta: Option<f64>,
    /// PRD per-transmitter power cap.
    #[arg(long)]
    pmax: Option<f64>,
    /// PRD pilot snapshots per covariance estimate.
    #[arg(long)]
    samples: Option<usize>,
    /// Sum-power budget for the FOP solvers (a, fop-pr1).
    #[arg(long)]
    total_power: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    /// Output directory; summaries go to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn scenario(&self) -> anyhow::Result<Scenario> {
        let mut s = match (&self.preset, &self.config) {
            (Some(name), None) => preset(name, self.seed.unwrap_or(0))?,
            (None, Some(path)) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            _ => bail!("give --preset (one of {}) or --config", PRESETS.join(", ")),
        };
        if let Some(seed) = self.seed {
            s.seed = seed;
        }
        if let Some(solver) = self.solver {
            s.solver = solver;
        }
        let o = &mut s.options;
        o.order_opt |= self.order_opt;
        o.random_init |= self.random_init;
        o.multistart = self.multistart.unwrap_or(o.multistart);
        o.rounds = self.rounds.unwrap_or(o.rounds);
        o.beta = self.beta.unwrap_or(o.beta);
        o.pmax = self.pmax.or(o.pmax);
        o.estimation_samples = self.samples.or(o.estimation_samples);
        o.total_power = self.total_power.or(o.total_power);
        o.max_iters = self.max_iters.unwrap_or(o.max_iters);
        s.validate()?;
        Ok(s)
    }
}

fn print_json<T: serde::Serialize>(v: &T) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Solve(c) => {
            let rec = run(&c.scenario()?)?;
            match &c.out {
                Some(dir) => write_run(dir, &rec)?,
                None => print_json(&rec)?,
            }
            eprintln!(
                "{}: {:?}, sum power {:.4} dB, {} half steps",
                rec.scenario.name, rec.summary.status, rec.summary.sum_power_db, rec.summary.half_steps
            );
        }
        Command::Batch { common, seeds } => {
            let s = common.scenario()?;
            let list: Vec<u64> = (0..seeds).map(|i| s.seed.wrapping_add(i)).collect();
            let b = batch(&s, &list)?;
            match &common.out {
                Some(dir) => write_batch(dir, &b)?,
                None => print_json(&b)?,
            }
            eprintln!("{} runs, {} failed, {} met all targets", b.runs, b.failures, b.met_all_targets);
        }
        Command::Region { common, rays } => {
            let points = region(&common.scenario()?, rays)?;
            match &common.out {
                Some(dir) => write_region(dir, &points)?,
                None => print_json(&points)?,
            }
        }
        Command::Check { input, tol } => {
            let text = std::fs::read_to_string(&input).with_context(|| format!("reading {}", input.display()))?;
            let rec: RunRecord = serde_json::from_str(&text)?;
            let report = check(&rec)?;
            print_json(&report)?;
            if !report.passes(tol) {
                eprintln!("optimality conditions not met at tolerance {tol}");
                std::process::exit(1);
            }
        }
    }
    Ok(())
}
