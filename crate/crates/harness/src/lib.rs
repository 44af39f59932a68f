//! Scenario generation, seeded experiment driver and report output for
//! `bmac-core`.

pub mod output;
pub mod run;
pub mod scenario;

pub use run::{batch, check, region, run, run_many, BatchSummary, RegionPoint, RunRecord, Summary, TraceRow};
pub use scenario::{preset, NetworkSource, RunOptions, Scenario, SolverKind, PRESETS};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] bmac_core::Error),
    #[error("scenario schema: {0}")]
    Schema(String),
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

/// `10 log10(x)`.
pub fn db(x: f64) -> f64 {
    10.0 * x.log10()
}
