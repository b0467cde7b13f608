//! File formats.
//!
//! - interval series: CSV `interval_index,num_available`, with capacity and
//!   interval length in a sidecar `<name>.json`
//! - event traces: CSV `timestamp_s,kind,instance_id`
//! - workload profiles, cost tables, plans and reports: JSON

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::migration::CostTable;
use crate::perf_model::WorkloadProfile;
use crate::simulator::SimReport;
use crate::trace::{EventTrace, IntervalSeries, TraceEvent, DEFAULT_INTERVAL_SECONDS};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).map_err(io_err(path))?))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(io_err(path))?))
}

fn with_path<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Json(j) => Error::MalformedTrace(format!("{}: {j}", path.display())),
        Error::Csv(c) => Error::MalformedTrace(format!("{}: {c}", path.display())),
        other => other,
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let reader = open(path)?;
    serde_json::from_reader(reader).map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

/// Sidecar metadata of an interval series file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesMeta {
    pub capacity: u32,
    #[serde(default = "default_interval")]
    pub interval_seconds: f64,
}

fn default_interval() -> f64 {
    DEFAULT_INTERVAL_SECONDS
}

pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

#[derive(Debug, Serialize, Deserialize)]
struct SeriesRow {
    interval_index: usize,
    num_available: u32,
}

/// Reads an interval series. Explicit `capacity` / `interval_seconds` win
/// over the sidecar; without either, capacity is the largest count.
pub fn read_series(path: &Path, capacity: Option<u32>, interval_seconds: Option<f64>) -> Result<IntervalSeries> {
    let mut rdr = csv::Reader::from_reader(open(path)?);
    let mut counts = Vec::new();
    for (i, row) in rdr.deserialize::<SeriesRow>().enumerate() {
        let row = with_path(path, row.map_err(Error::from))?;
        if row.interval_index != i {
            return Err(Error::MalformedTrace(format!(
                "{}: expected interval_index {i}, found {}",
                path.display(),
                row.interval_index
            )));
        }
        counts.push(row.num_available);
    }
    let sidecar = sidecar_path(path);
    let meta: Option<SeriesMeta> = if sidecar.exists() {
        Some(with_path(&sidecar, read_json(&sidecar))?)
    } else {
        None
    };
    let capacity = capacity
        .or(meta.map(|m| m.capacity))
        .unwrap_or_else(|| counts.iter().copied().max().unwrap_or(1).max(1));
    let interval_seconds = interval_seconds
        .or(meta.map(|m| m.interval_seconds))
        .unwrap_or(DEFAULT_INTERVAL_SECONDS);
    IntervalSeries::new(counts, capacity, interval_seconds)
}

/// Writes the CSV and its sidecar.
pub fn write_series(path: &Path, series: &IntervalSeries) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(create(path)?);
    for (i, &n) in series.counts.iter().enumerate() {
        wtr.serialize(SeriesRow {
            interval_index: i,
            num_available: n,
        })?;
    }
    if series.counts.is_empty() {
        wtr.write_record(["interval_index", "num_available"])?;
    }
    wtr.flush().map_err(io_err(path))?;
    write_json(
        &sidecar_path(path),
        &SeriesMeta {
            capacity: series.capacity,
            interval_seconds: series.interval_seconds,
        },
    )
}

pub fn read_events(path: &Path) -> Result<EventTrace> {
    let mut rdr = csv::Reader::from_reader(open(path)?);
    let events = rdr
        .deserialize::<TraceEvent>()
        .map(|r| with_path(path, r.map_err(Error::from)))
        .collect::<Result<Vec<_>>>()?;
    EventTrace::new(events)
}

pub fn write_events(path: &Path, trace: &EventTrace) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(create(path)?);
    for e in &trace.events {
        wtr.serialize(e)?;
    }
    if trace.events.is_empty() {
        wtr.write_record(["timestamp_s", "kind", "instance_id"])?;
    }
    wtr.flush().map_err(io_err(path))
}

pub fn read_profile(path: &Path) -> Result<WorkloadProfile> {
    let w: WorkloadProfile = read_json(path).map_err(|e| match e {
        Error::InvalidArgument(m) => Error::InvalidProfile(m),
        other => other,
    })?;
    w.validate()?;
    Ok(w)
}

pub fn read_cost_table(path: &Path) -> Result<CostTable> {
    let c: CostTable = read_json(path)?;
    c.validate()?;
    Ok(c)
}

#[derive(Debug, Serialize)]
struct IntervalRow<'a> {
    interval: usize,
    n: u32,
    d: u32,
    p: u32,
    throughput: f64,
    commits: i64,
    migration_kind: &'a str,
    migration_seconds: f64,
    effective: f64,
    migration: f64,
    checkpoint_overhead: f64,
    wasted_rollback: f64,
    idle: f64,
}

/// Per-interval log of a simulation; ledger columns are instance-seconds.
pub fn write_interval_log(path: &Path, report: &SimReport) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(create(path)?);
    for r in &report.intervals {
        let kind = r.migration_kind.to_string();
        let (d, p) = r.config.map_or((0, 0), |c| (c.d, c.p));
        wtr.serialize(IntervalRow {
            interval: r.interval,
            n: r.available,
            d,
            p,
            throughput: r.throughput,
            commits: r.commits,
            migration_kind: &kind,
            migration_seconds: r.migration_seconds,
            effective: r.ledger.effective,
            migration: r.ledger.migration,
            checkpoint_overhead: r.ledger.checkpoint_overhead,
            wasted_rollback: r.ledger.wasted_rollback,
            idle: r.ledger.idle,
        })?;
    }
    wtr.flush().map_err(io_err(path))
}
