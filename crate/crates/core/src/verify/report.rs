//! Simulation reports: one row per bias value, in a fixed column order.

use serde::{Deserialize, Serialize};

use crate::rng::FlipLedger;
use crate::verify::stats::RunStats;

/// The CSV columns, in order.
pub const CSV_COLUMNS: [&str; 8] = ["p", "target", "trials", "heads", "estimate", "ci_low", "ci_high", "flips_mean"];

/// The fields written to CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub p: f64,
    /// Closed-form value at `p`, when the run has one.
    pub target: Option<f64>,
    pub trials: u64,
    pub heads: u64,
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub flips_mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    #[serde(flatten)]
    pub csv: CsvRow,
    pub completed: u64,
    pub exhausted: u64,
    pub failed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub first_failure: Option<String>,
    pub ledger: FlipLedger,
}

impl ReportRow {
    pub fn new(p: f64, target: Option<f64>, stats: &RunStats) -> Self {
        ReportRow {
            csv: CsvRow {
                p,
                target,
                trials: stats.trials,
                heads: stats.heads,
                estimate: stats.estimate(),
                ci_low: stats.wilson_low,
                ci_high: stats.wilson_high,
                flips_mean: stats.flips_mean(),
            },
            completed: stats.completed,
            exhausted: stats.exhausted,
            failed: stats.failed,
            first_failure: stats.first_failure.clone(),
            ledger: stats.ledger.clone(),
        }
    }
}

/// A whole simulation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    /// What was sampled: `protocol` or `spb`.
    pub source: String,
    /// Protocol JSON or certificate hash.
    pub subject: String,
    pub master_seed: u64,
    pub budget: u64,
    pub sigma: f64,
    /// Sorted by `p`.
    pub rows: Vec<ReportRow>,
}

impl SimulationReport {
    pub fn exhausted(&self) -> u64 {
        self.rows.iter().map(|r| r.exhausted).sum()
    }

    pub fn failed(&self) -> u64 {
        self.rows.iter().map(|r| r.failed).sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }
}
