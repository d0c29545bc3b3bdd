//! The eight-condition experiment grid, run in parallel and summarized as one table.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::engine::run;
use crate::metrics::ReportSummary;
use crate::scenario::{Condition, Severity};

#[derive(Debug, Clone)]
pub struct BatchRow {
    pub condition: Condition,
    /// Headline numbers, or the reason the run produced none.
    pub outcome: Result<ReportSummary<f64>, String>,
    pub elapsed: Duration,
}

impl BatchRow {
    pub fn summary(&self) -> Option<&ReportSummary<f64>> {
        self.outcome.as_ref().ok()
    }
}

/// Grid conditions, optionally restricted to one severity.
pub fn conditions(severity: Option<Severity>) -> Vec<Condition> {
    Condition::grid().into_iter().filter(|c| severity.is_none_or(|s| c.severity == s)).collect()
}

fn run_one(condition: Condition, seed: u64) -> BatchRow {
    let started = Instant::now();
    let outcome = condition
        .spec::<f64>()
        .and_then(|mut spec| {
            spec.seed = seed;
            run(spec)
        })
        .map_err(|e| e.to_string())
        .and_then(|record| match (&record.manifest.error, record.metrics) {
            (Some(err), _) => Err(err.clone()),
            (None, Some(m)) => m.report.ok_or_else(|| "run ended before the reported leg".to_owned()),
            (None, None) => Err("no metrics".to_owned()),
        });
    if let Err(e) = &outcome {
        log::warn!("{condition}: {e}");
    }
    BatchRow { condition, outcome, elapsed: started.elapsed() }
}

/// Runs every condition with the same seed. Rows keep the input order; a
/// failed run becomes a failed row and the rest carry on.
pub fn run_batch(conditions: &[Condition], seed: u64) -> Vec<BatchRow> {
    conditions.par_iter().map(|&c| run_one(c, seed)).collect()
}

/// Plain-text table: one row per condition, designed and flown heading,
/// heading error and final distance.
pub fn format_table(rows: &[BatchRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<8} {:<8} {:<8} {:>10} {:>10} {:>10} {:>10}",
        "scenario", "method", "severity", "designed", "heading", "error", "distance"
    );
    for row in rows {
        let c = &row.condition;
        let _ = write!(out, "{:<8} {:<8} {:<8} ", c.scenario, c.method.as_str(), c.severity.as_str());
        match &row.outcome {
            Ok(s) => {
                let _ = writeln!(
                    out,
                    "{:>10.1} {:>10.1} {:>10.1} {:>10.2}",
                    s.designed_heading_deg, s.heading_direction_deg, s.heading_error_deg, s.final_distance_m
                );
            }
            Err(e) => {
                let _ = writeln!(out, "FAILED: {e}");
            }
        }
    }
    out
}
