//! On-disk run format: a TOML manifest and metrics file plus CSV tables for
//! trajectories, the trust timeline and comm-graph snapshots.
//!
//! Floats in the CSV tables are written with 17 significant digits so a
//! write/read round trip is bit-exact.

use std::fs::{self, File};
use std::io;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::engine::LegRecord;
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::metrics::MetricsReport;
use crate::model::{RobotId, Role, TrustLevel};
use crate::scalar::Scalar;
use crate::scenario::ScenarioSpec;

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const TRUST_FILE: &str = "trust.csv";
pub const METRICS_FILE: &str = "metrics.toml";
pub const COMM_GRAPH_FILE: &str = "comm_graph.csv";

pub const TRAJECTORY_HEADER: [&str; 13] =
    ["t", "id", "x", "y", "z", "vx", "vy", "vz", "heading", "trust_level", "trust_gain", "role", "faulty"];
const TRUST_HEADER: [&str; 4] = ["t", "id", "level", "gain"];
const EDGE_HEADER: [&str; 4] = ["t", "i", "j", "quality"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Manifest<T> {
    pub engine_version: String,
    pub seed: u64,
    pub valid: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub n_robots: usize,
    pub n_steps: usize,
    #[serde(default)]
    pub legs: Vec<LegRecord<T>>,
    pub scenario: ScenarioSpec<T>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRow<T> {
    pub t: T,
    pub id: RobotId,
    pub pos: Vec3<T>,
    pub vel: Vec3<T>,
    pub heading: T,
    pub trust_level: TrustLevel,
    pub trust_gain: T,
    pub role: Role,
    pub faulty: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrustRow<T> {
    pub t: T,
    pub id: RobotId,
    pub level: TrustLevel,
    pub gain: T,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeRow<T> {
    pub t: T,
    pub i: RobotId,
    pub j: RobotId,
    pub quality: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord<T: Scalar> {
    pub manifest: Manifest<T>,
    pub trajectory: Vec<TrajectoryRow<T>>,
    pub trust: Vec<TrustRow<T>>,
    pub comm_graph: Vec<EdgeRow<T>>,
    pub metrics: Option<MetricsReport<T>>,
}

impl<T: Scalar> RunRecord<T> {
    pub fn is_valid(&self) -> bool {
        self.manifest.valid
    }

    /// Rows belonging to one recorded step.
    pub fn sample(&self, step: usize) -> &[TrajectoryRow<T>] {
        let n = self.manifest.n_robots;
        &self.trajectory[step * n..(step + 1) * n]
    }
}

fn fmt_float<T: Scalar>(v: T) -> String {
    format!("{:.16e}", v.as_f64())
}

fn parse_field<F: FromStr>(rec: &csv::StringRecord, idx: usize, file: &str) -> Result<F> {
    rec.get(idx)
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| Error::SchemaMismatch(format!("{file}: bad field {idx} on line {}", line_of(rec))))
}

fn parse_float<T: Scalar>(rec: &csv::StringRecord, idx: usize, file: &str) -> Result<T> {
    parse_field::<f64>(rec, idx, file).map(T::lit)
}

fn parse_level(rec: &csv::StringRecord, idx: usize, file: &str) -> Result<TrustLevel> {
    let raw: u8 = parse_field(rec, idx, file)?;
    TrustLevel::new(raw).ok_or_else(|| Error::SchemaMismatch(format!("{file}: trust level {raw} out of range")))
}

fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

fn csv_err(e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            _ => unreachable!(),
        }
    } else {
        Error::SchemaMismatch(e.to_string())
    }
}

fn open_required(dir: &Path, name: &str) -> Result<File> {
    File::open(dir.join(name)).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => Error::SchemaMismatch(format!("missing {name}")),
        _ => Error::Io(e),
    })
}

fn read_required(dir: &Path, name: &str) -> Result<String> {
    fs::read_to_string(dir.join(name)).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => Error::SchemaMismatch(format!("missing {name}")),
        _ => Error::Io(e),
    })
}

fn check_header(reader: &mut csv::Reader<File>, expected: &[&str], file: &str) -> Result<()> {
    let header = reader.headers().map_err(csv_err)?;
    if header.iter().ne(expected.iter().copied()) {
        return Err(Error::SchemaMismatch(format!("{file}: unexpected header {header:?}")));
    }
    Ok(())
}

pub fn write_trajectory<T: Scalar>(path: &Path, rows: &[TrajectoryRow<T>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(TRAJECTORY_HEADER).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            fmt_float(r.t),
            r.id.0.to_string(),
            fmt_float(r.pos.x),
            fmt_float(r.pos.y),
            fmt_float(r.pos.z),
            fmt_float(r.vel.x),
            fmt_float(r.vel.y),
            fmt_float(r.vel.z),
            fmt_float(r.heading),
            r.trust_level.get().to_string(),
            fmt_float(r.trust_gain),
            r.role.as_str().to_owned(),
            r.faulty.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn read_trajectory<T: Scalar>(dir: &Path) -> Result<Vec<TrajectoryRow<T>>> {
    let mut reader = csv::Reader::from_reader(open_required(dir, TRAJECTORY_FILE)?);
    check_header(&mut reader, &TRAJECTORY_HEADER, TRAJECTORY_FILE)?;
    let f = TRAJECTORY_FILE;
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(csv_err)?;
        if rec.len() != TRAJECTORY_HEADER.len() {
            return Err(Error::SchemaMismatch(format!("{f}: short row on line {}", line_of(&rec))));
        }
        let role: Role = rec[11].parse()?;
        rows.push(TrajectoryRow {
            t: parse_float(&rec, 0, f)?,
            id: RobotId(parse_field(&rec, 1, f)?),
            pos: Vec3::new(parse_float(&rec, 2, f)?, parse_float(&rec, 3, f)?, parse_float(&rec, 4, f)?),
            vel: Vec3::new(parse_float(&rec, 5, f)?, parse_float(&rec, 6, f)?, parse_float(&rec, 7, f)?),
            heading: parse_float(&rec, 8, f)?,
            trust_level: parse_level(&rec, 9, f)?,
            trust_gain: parse_float(&rec, 10, f)?,
            role,
            faulty: parse_field(&rec, 12, f)?,
        });
    }
    Ok(rows)
}

fn write_trust<T: Scalar>(path: &Path, rows: &[TrustRow<T>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(TRUST_HEADER).map_err(csv_err)?;
    for r in rows {
        w.write_record([fmt_float(r.t), r.id.0.to_string(), r.level.get().to_string(), fmt_float(r.gain)])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn read_trust<T: Scalar>(dir: &Path) -> Result<Vec<TrustRow<T>>> {
    let mut reader = csv::Reader::from_reader(open_required(dir, TRUST_FILE)?);
    check_header(&mut reader, &TRUST_HEADER, TRUST_FILE)?;
    let f = TRUST_FILE;
    reader
        .records()
        .map(|rec| {
            let rec = rec.map_err(csv_err)?;
            Ok(TrustRow {
                t: parse_float(&rec, 0, f)?,
                id: RobotId(parse_field(&rec, 1, f)?),
                level: parse_level(&rec, 2, f)?,
                gain: parse_float(&rec, 3, f)?,
            })
        })
        .collect()
}

fn write_edges<T: Scalar>(path: &Path, rows: &[EdgeRow<T>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(EDGE_HEADER).map_err(csv_err)?;
    for r in rows {
        w.write_record([fmt_float(r.t), r.i.0.to_string(), r.j.0.to_string(), fmt_float(r.quality)])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn read_edges<T: Scalar>(dir: &Path) -> Result<Vec<EdgeRow<T>>> {
    // optional: older runs and hand-made fixtures may not carry snapshots
    let Ok(file) = File::open(dir.join(COMM_GRAPH_FILE)) else {
        return Ok(Vec::new());
    };
    let mut reader = csv::Reader::from_reader(file);
    check_header(&mut reader, &EDGE_HEADER, COMM_GRAPH_FILE)?;
    let f = COMM_GRAPH_FILE;
    reader
        .records()
        .map(|rec| {
            let rec = rec.map_err(csv_err)?;
            Ok(EdgeRow {
                t: parse_float(&rec, 0, f)?,
                i: RobotId(parse_field(&rec, 1, f)?),
                j: RobotId(parse_field(&rec, 2, f)?),
                quality: parse_float(&rec, 3, f)?,
            })
        })
        .collect()
}

/// On-disk shape of the metrics file. `valid` mirrors the manifest so a
/// reader of the metrics alone can tell a partial run apart.
#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
struct MetricsFile<T> {
    valid: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    metrics: Option<MetricsReport<T>>,
}

/// Writes the full file set into `out_dir`, creating it if needed.
pub fn write_run<T: Scalar>(record: &RunRecord<T>, out_dir: impl AsRef<Path>) -> Result<()> {
    let dir = out_dir.as_ref();
    fs::create_dir_all(dir)?;
    let manifest = toml::to_string(&record.manifest).map_err(|e| Error::SchemaMismatch(e.to_string()))?;
    fs::write(dir.join(MANIFEST_FILE), manifest)?;
    write_trajectory(&dir.join(TRAJECTORY_FILE), &record.trajectory)?;
    write_trust(&dir.join(TRUST_FILE), &record.trust)?;
    write_edges(&dir.join(COMM_GRAPH_FILE), &record.comm_graph)?;
    let metrics = MetricsFile { valid: record.manifest.valid, metrics: record.metrics.clone() };
    let metrics = toml::to_string(&metrics).map_err(|e| Error::SchemaMismatch(e.to_string()))?;
    fs::write(dir.join(METRICS_FILE), metrics)?;
    Ok(())
}

/// Loads a run written by [`write_run`].
pub fn read_run<T: Scalar>(dir: impl AsRef<Path>) -> Result<RunRecord<T>> {
    let dir = dir.as_ref();
    let manifest: Manifest<T> = toml::from_str(&read_required(dir, MANIFEST_FILE)?)
        .map_err(|e| Error::SchemaMismatch(format!("{MANIFEST_FILE}: {e}")))?;
    let metrics: MetricsFile<T> = toml::from_str(&read_required(dir, METRICS_FILE)?)
        .map_err(|e| Error::SchemaMismatch(format!("{METRICS_FILE}: {e}")))?;
    let trajectory = read_trajectory(dir)?;
    let expected = manifest.n_robots * manifest.n_steps;
    if trajectory.len() != expected {
        return Err(Error::SchemaMismatch(format!(
            "{TRAJECTORY_FILE}: {} rows, expected {} robots x {} steps = {expected}",
            trajectory.len(),
            manifest.n_robots,
            manifest.n_steps
        )));
    }
    let trust = read_trust(dir)?;
    let comm_graph = read_edges(dir)?;
    Ok(RunRecord { manifest, trajectory, trust, comm_graph, metrics: metrics.metrics })
}
