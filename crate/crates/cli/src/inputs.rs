//! Resolution of flag values into library inputs.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader};
use std::path::Path;

use anyhow::{anyhow, Context};
use liveput::io::{read_cost_table, read_events, read_profile, read_series};
use liveput::predictor::ForecastConfig;
use liveput::trace::{gen_bursty, gen_synthetic, to_interval_series, SyntheticSpec, DEFAULT_INTERVAL_SECONDS};
use liveput::{CostTable, IntervalSeries, Policy, WorkloadProfile};

use crate::{CliResult, Failure};

pub fn usage(flag: &str, e: impl std::fmt::Display) -> Failure {
    Failure::Usage(anyhow!("{flag}: {e}"))
}

pub fn input(flag: &str, e: impl std::fmt::Display) -> Failure {
    Failure::Input(anyhow!("{flag}: {e}"))
}

/// `a..b`, `a..=b` (both inclusive) or `a,b,c`.
pub fn seeds(spec: &str) -> CliResult<Vec<u64>> {
    let bad = |e: &dyn std::fmt::Display| usage("--seeds", format!("{spec:?}: {e}"));
    let out: Vec<u64> = if let Some((a, b)) = spec.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|e| bad(&e))?;
        let b: u64 = b.trim().trim_start_matches('=').parse().map_err(|e| bad(&e))?;
        if b < a {
            return Err(bad(&"empty range"));
        }
        (a..=b).collect()
    } else {
        spec.split(',')
            .map(|s| s.trim().parse().map_err(|e| bad(&e)))
            .collect::<CliResult<_>>()?
    };
    if out.is_empty() {
        return Err(bad(&"no seeds"));
    }
    Ok(out)
}

/// Policies with the labels used for file names.
pub fn policies(spec: &str, lookahead: usize) -> CliResult<Vec<(String, Policy)>> {
    let mut out: Vec<(String, Policy)> = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let policy = Policy::parse(part, lookahead).map_err(|e| usage("--policies", e))?;
        let label = part.replace([':', '/', ' '], "-");
        if out.iter().any(|(l, _)| *l == label) {
            return Err(usage("--policies", format!("{part:?} listed twice")));
        }
        out.push((label, policy));
    }
    if out.is_empty() {
        return Err(usage("--policies", "at least one policy is required"));
    }
    Ok(out)
}

pub fn profile(spec: &str) -> CliResult<WorkloadProfile> {
    match spec.strip_prefix("builtin:") {
        Some(name) => liveput::profiles::by_name(name).map_err(|e| usage("--profile", e)),
        None => read_profile(Path::new(spec)).map_err(|e| input("--profile", e)),
    }
}

pub fn costs(path: Option<&Path>) -> CliResult<CostTable> {
    match path {
        Some(p) => read_cost_table(p).map_err(|e| input("--cost-table", e)),
        None => Ok(CostTable::default()),
    }
}

fn key_values(body: &str) -> CliResult<BTreeMap<String, String>> {
    body.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|kv| {
            kv.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| usage("--trace", format!("expected key=value, got {kv:?}")))
        })
        .collect()
}

fn take<T: std::str::FromStr>(kv: &mut BTreeMap<String, String>, key: &str) -> CliResult<Option<T>>
where
    T::Err: std::fmt::Display,
{
    kv.remove(key)
        .map(|v| v.parse().map_err(|e| usage("--trace", format!("{key}={v:?}: {e}"))))
        .transpose()
}

/// Builds a series from `synthetic:...` / `bursty:...`, or `None` for a path.
pub fn generated(spec: &str, interval_seconds: Option<f64>) -> CliResult<Option<IntervalSeries>> {
    let Some((kind, body)) = spec.split_once(':') else {
        return Ok(None);
    };
    let mut kv = key_values(body)?;
    let seed = take(&mut kv, "seed")?.unwrap_or(0);
    let capacity = take(&mut kv, "capacity")?.unwrap_or(32);
    let mut series = match kind {
        "synthetic" => {
            let length = take(&mut kv, "length")?.unwrap_or(61);
            let mut s = SyntheticSpec::new(seed, capacity, length);
            let events: Option<usize> = take(&mut kv, "events")?;
            s.preemption_events = take(&mut kv, "preemptions")?.or(events).unwrap_or(0);
            s.allocation_events = take(&mut kv, "allocations")?.or(events).unwrap_or(0);
            s.start = take(&mut kv, "start")?.unwrap_or(capacity);
            if let Some(m) = kv.remove("magnitude") {
                let (lo, hi) = m
                    .split_once("..")
                    .and_then(|(a, b)| Some((a.parse().ok()?, b.trim_start_matches('=').parse().ok()?)))
                    .ok_or_else(|| usage("--trace", format!("magnitude={m:?}: expected lo..hi")))?;
                s.magnitude = (lo, hi);
            }
            s.interval_seconds = interval_seconds.unwrap_or(DEFAULT_INTERVAL_SECONDS);
            gen_synthetic(&s).map_err(|e| usage("--trace", e))?
        }
        "bursty" => gen_bursty(seed, capacity, take(&mut kv, "length")?.unwrap_or(240)),
        // a path with a drive letter or similar
        _ if Path::new(spec).exists() => return Ok(None),
        other => {
            return Err(usage(
                "--trace",
                format!("unknown generator {other:?}; expected synthetic or bursty"),
            ))
        }
    };
    if let Some(k) = kv.keys().next() {
        return Err(usage("--trace", format!("unknown key {k:?} for {kind}")));
    }
    if let Some(t) = interval_seconds {
        series.interval_seconds = t;
    }
    Ok(Some(series))
}

/// Loads a trace from a generator spec, an interval-series CSV or an
/// event-trace CSV (recognized by its header).
pub fn series(spec: &str, interval_seconds: Option<f64>, capacity: Option<u32>) -> CliResult<IntervalSeries> {
    if let Some(t) = interval_seconds {
        if !(t > 0.0 && t.is_finite()) {
            return Err(usage("--interval-seconds", format!("must be positive, got {t}")));
        }
    }
    let mut s = match generated(spec, interval_seconds)? {
        Some(s) => s,
        None => {
            let path = Path::new(spec);
            if is_event_trace(path).map_err(|e| input("--trace", format!("{}: {e}", path.display())))? {
                let events = read_events(path).map_err(|e| input("--trace", e))?;
                let t = interval_seconds.unwrap_or(DEFAULT_INTERVAL_SECONDS);
                let raw = to_interval_series(&events, t, u32::MAX).map_err(|e| input("--trace", e))?;
                let cap = capacity.unwrap_or_else(|| raw.counts.iter().copied().max().unwrap_or(1).max(1));
                IntervalSeries::new(raw.counts, cap, t).map_err(|e| input("--trace", e))?
            } else {
                read_series(path, capacity, interval_seconds).map_err(|e| input("--trace", e))?
            }
        }
    };
    if let Some(c) = capacity {
        s = IntervalSeries::new(s.counts, c, s.interval_seconds).map_err(|e| input("--capacity", e))?;
    }
    if s.is_empty() {
        return Err(input("--trace", format!("{spec}: no intervals")));
    }
    Ok(s)
}

fn is_event_trace(path: &Path) -> anyhow::Result<bool> {
    let file = std::fs::File::open(path).context("cannot open")?;
    let mut header = String::new();
    BufReader::new(file).read_line(&mut header)?;
    Ok(header.trim_start_matches('\u{feff}').starts_with("timestamp_s"))
}

pub fn forecast_config(capacity: u32, history: usize, lookahead: usize) -> CliResult<ForecastConfig> {
    let mut cfg = ForecastConfig::new(capacity).with_lookahead(lookahead);
    cfg.history_len = history;
    cfg.validate().map_err(|e| usage("--history/--lookahead", e))?;
    Ok(cfg)
}
