//! Per-leg heading and final-distance metrics computed from a recorded run.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{bearing_of, Vec3};
use crate::model::{is_connected, RobotId};
use crate::scalar::{wrap_deg, Scalar};
use crate::scenario::{is_abandoned, LegEnd, ScenarioSpec};
use crate::telemetry::{RunRecord, TrajectoryRow};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct LegMetrics<T> {
    pub target_index: usize,
    pub start_time: T,
    pub end_time: T,
    pub end_reason: LegEnd,
    /// Bearing from the leg's starting centroid to its target.
    pub designed_heading_deg: T,
    /// Bearing of the centroid displacement over the leg.
    pub heading_direction_deg: T,
    /// Team centroid to target center at the end of the leg.
    pub final_distance_m: T,
    /// Same, averaging every robot including abandoned ones.
    pub final_distance_all_m: T,
}

impl<T: Scalar> LegMetrics<T> {
    pub fn heading_error_deg(&self) -> T {
        wrap_deg(self.heading_direction_deg - self.designed_heading_deg)
    }
}

/// The scenario's headline numbers, shaped like a row of the results table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ReportSummary<T> {
    pub designed_heading_deg: T,
    pub heading_direction_deg: T,
    pub heading_error_deg: T,
    pub final_distance_m: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct CentroidSample<T> {
    pub t: T,
    pub pos: Vec3<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct MetricsReport<T> {
    /// Present only when the selected leg and target were both reached.
    pub report: Option<ReportSummary<T>>,
    /// Fraction of recorded steps on which the team's comm graph was connected.
    pub connectivity_fraction: T,
    pub legs: Vec<LegMetrics<T>>,
    pub centroid_trace: Vec<CentroidSample<T>>,
}

impl<T: Scalar> MetricsReport<T> {
    /// Final distance for `target`, taken from the last leg that aimed at it.
    pub fn final_distance(&self, target: usize) -> Option<T> {
        self.legs.iter().rev().find(|l| l.target_index == target).map(|l| l.final_distance_m)
    }
}

struct Sample<'a, T> {
    t: T,
    rows: Vec<&'a TrajectoryRow<T>>,
}

fn samples<T: Scalar>(record: &RunRecord<T>) -> Result<Vec<Sample<'_, T>>> {
    let n = record.manifest.n_robots;
    if n == 0 || !record.trajectory.len().is_multiple_of(n) {
        return Err(Error::SchemaMismatch("trajectory row count is not a multiple of the robot count".into()));
    }
    Ok(record
        .trajectory
        .chunks(n)
        .map(|chunk| Sample { t: chunk[0].t, rows: chunk.iter().collect() })
        .collect())
}

fn centroid<'a, T: Scalar>(rows: impl Iterator<Item = &'a &'a TrajectoryRow<T>>) -> Option<Vec3<T>> {
    let (sum, n) = rows.fold((Vec3::zero(), 0usize), |(acc, n), r| (acc + r.pos, n + 1));
    (n > 0).then(|| sum / T::from_usize(n))
}

/// Heading and distance metrics over the recorded samples and leg boundaries.
pub fn compute_metrics<T: Scalar>(record: &RunRecord<T>, spec: &ScenarioSpec<T>) -> Result<MetricsReport<T>> {
    let samples = samples(record)?;
    let team = |s: &Sample<'_, T>| -> Vec3<T> {
        let members: Vec<_> = s
            .rows
            .iter()
            .filter(|r| !is_abandoned(spec.method, &spec.params, r.trust_gain))
            .collect();
        centroid(members.iter().copied()).or_else(|| centroid(s.rows.iter())).unwrap_or_else(Vec3::zero)
    };

    let mut legs = Vec::with_capacity(record.manifest.legs.len());
    for leg in &record.manifest.legs {
        let (Some(start), Some(end)) = (samples.get(leg.start_step), samples.get(leg.end_step)) else {
            return Err(Error::SchemaMismatch("leg boundary past the recorded samples".into()));
        };
        let target = spec.target_center(leg.target_index);
        let c0 = team(start);
        let c1 = team(end);
        let all_end = centroid(end.rows.iter()).unwrap_or(c1);
        legs.push(LegMetrics {
            target_index: leg.target_index,
            start_time: start.t,
            end_time: end.t,
            end_reason: leg.end_reason,
            designed_heading_deg: bearing_of(target - c0)?,
            heading_direction_deg: bearing_of(c1 - c0)?,
            final_distance_m: c1.distance(target),
            final_distance_all_m: all_end.distance(target),
        });
    }

    let report = legs.get(spec.report.heading_leg).and_then(|h| {
        let d = legs.iter().rev().find(|l| l.target_index == spec.report.distance_target)?;
        Some(ReportSummary {
            designed_heading_deg: h.designed_heading_deg,
            heading_direction_deg: h.heading_direction_deg,
            heading_error_deg: h.heading_error_deg(),
            final_distance_m: d.final_distance_m,
        })
    });

    let mut connected = 0usize;
    let mut centroid_trace = Vec::with_capacity(samples.len());
    for s in &samples {
        let members: BTreeSet<RobotId> = s
            .rows
            .iter()
            .filter(|r| !is_abandoned(spec.method, &spec.params, r.trust_gain))
            .map(|r| r.id)
            .collect();
        let mut adjacency: BTreeMap<RobotId, BTreeSet<RobotId>> = BTreeMap::new();
        for (k, a) in s.rows.iter().enumerate() {
            for b in &s.rows[k + 1..] {
                if a.pos.distance(b.pos) < spec.params.comm_radius {
                    adjacency.entry(a.id).or_default().insert(b.id);
                    adjacency.entry(b.id).or_default().insert(a.id);
                }
            }
        }
        if is_connected(&adjacency, &members) {
            connected += 1;
        }
        centroid_trace.push(CentroidSample { t: s.t, pos: team(s) });
    }
    let connectivity_fraction = if samples.is_empty() {
        T::zero()
    } else {
        T::from_usize(connected) / T::from_usize(samples.len())
    };

    Ok(MetricsReport { report, connectivity_fraction, legs, centroid_trace })
}
