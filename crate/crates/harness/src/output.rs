//! CSV traces and JSON summaries.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use crate::run::{BatchSummary, RegionPoint, RunRecord, TraceRow};
use crate::Result;

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// One header line plus one row per half step.
pub fn write_trace_csv<W: Write>(out: W, trace: &[TraceRow], links: usize) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let prd = trace.first().is_some_and(|r| r.powers.is_some());
    let mut header: Vec<String> =
        ["half_step", "iteration", "half", "sum_power", "sum_power_db", "max_residual"].iter().map(|s| s.to_string()).collect();
    header.extend((0..links).map(|l| format!("rate_bits_{l}")));
    if prd {
        header.extend((0..links).map(|l| format!("power_{l}")));
        header.extend((0..links).map(|l| format!("capped_{l}")));
    }
    w.write_record(&header)?;
    for r in trace {
        let mut row = vec![
            r.half_step.to_string(),
            r.iteration.to_string(),
            format!("{:?}", r.half).to_lowercase(),
            r.sum_power.to_string(),
            r.sum_power_db.to_string(),
            fmt_opt(r.max_residual),
        ];
        row.extend(r.rates_bits.iter().map(|x| x.to_string()));
        if prd {
            row.extend(r.powers.iter().flatten().map(|x| x.to_string()));
            row.extend(r.capped.iter().flatten().map(|x| x.to_string()));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// `trace.csv` and `summary.json` under `dir`.
pub fn write_run(dir: &Path, rec: &RunRecord) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_trace_csv(File::create(dir.join("trace.csv"))?, &rec.trace, rec.scenario.links())?;
    let mut f = File::create(dir.join("summary.json"))?;
    serde_json::to_writer_pretty(&mut f, rec)?;
    writeln!(f)?;
    Ok(())
}

pub fn write_batch(dir: &Path, b: &BatchSummary) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut f = File::create(dir.join("batch.json"))?;
    serde_json::to_writer_pretty(&mut f, b)?;
    writeln!(f)?;
    let mut w = csv::Writer::from_path(dir.join("seeds.csv"))?;
    w.write_record(["seed", "status", "sum_power", "sum_power_db", "min_rate_bits", "meets_targets", "iterations", "error"])?;
    for o in &b.outcomes {
        w.write_record([
            o.seed.to_string(),
            o.status.map(|s| format!("{s:?}")).unwrap_or_default(),
            fmt_opt(o.sum_power),
            fmt_opt(o.sum_power_db),
            fmt_opt(o.min_rate_bits),
            o.meets_targets.to_string(),
            fmt_opt(o.iterations),
            o.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_region(dir: &Path, points: &[RegionPoint]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("region.csv"))?;
    let links = points.first().map_or(0, |p| p.rates_bits.len());
    let mut header = vec!["theta".to_string(), "alpha".to_string(), "sum_power".to_string(), "status".to_string()];
    header.extend((0..links).map(|l| format!("rate_bits_{l}")));
    w.write_record(&header)?;
    for p in points {
        let mut row = vec![p.theta.to_string(), fmt_opt(p.alpha), p.sum_power.to_string(), format!("{:?}", p.status)];
        row.extend(p.rates_bits.iter().map(|x| x.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::preset;

    #[test]
    fn trace_rows_are_half_steps_plus_header() {
        let rec = crate::run(&preset("ic3", 2).unwrap()).unwrap();
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, &rec.trace, 3).unwrap();
        let lines = String::from_utf8(buf).unwrap().lines().count();
        assert_eq!(lines, rec.summary.half_steps + 1);
        assert_eq!(rec.summary.half_steps as f64, 2.0 * rec.summary.iterations);
    }

    #[test]
    fn prd_trace_has_power_columns() {
        let mut s = preset("ic3", 2).unwrap();
        s.solver = crate::SolverKind::Prd;
        s.options.pmax = Some(1e3);
        let rec = crate::run(&s).unwrap();
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, &rec.trace, 3).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.lines().next().unwrap().ends_with("capped_2"));
        assert_eq!(text.lines().count(), 8);
    }
}
