use std::collections::BTreeMap;
use std::path::Path;

use anyhow::anyhow;
use liveput::io::{write_interval_log, write_json, write_series};
use liveput::optimizer::Plan;
use liveput::predictor::{self, evaluate_windows};
use liveput::simulator::run;
use liveput::trace::gen_multigpu;
use liveput::{
    ForecastMethod, IntervalSeries, LiveputOptimizer, OptimizerConfig, ParallelConfig, ScenarioMode, SimOptions,
    SimReport,
};
use serde::Serialize;

use crate::inputs::{self, input, usage};
use crate::{CliResult, CompareArgs, Failure, GenTraceArgs, ModelArgs, OptimizeArgs, PredictArgs, SimulateArgs};

const HOUR: f64 = 3600.0;

fn output(flag: &str, path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Input(anyhow!("{flag}: cannot write {}: {e}", path.display()))
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
    let fail = |e: &dyn std::fmt::Display| output("--out", path, e);
    let mut w = csv::Writer::from_path(path).map_err(|e| fail(&e))?;
    for r in rows {
        w.serialize(r).map_err(|e| fail(&e))?;
    }
    w.flush().map_err(|e| fail(&e))
}

fn make_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| output("--out", dir, e))
}

fn sim_options(m: &ModelArgs, history: usize) -> CliResult<SimOptions> {
    if history < 3 {
        return Err(usage("--history", "must be >= 3"));
    }
    if m.mc_trials == 0 {
        return Err(usage("--mc-trials", "must be >= 1"));
    }
    Ok(SimOptions {
        history_len: history,
        mc_trials: m.mc_trials,
        costs: inputs::costs(m.cost_table.as_deref())?,
    })
}

#[derive(Debug, Serialize)]
struct SummaryRow {
    policy: String,
    seed: u64,
    committed_samples: u64,
    rollbacks: u32,
    spot_cost: f64,
    cost_per_sample: Option<f64>,
    /// Committed samples relative to the first policy at the same seed.
    speedup: f64,
}

pub fn simulate(a: SimulateArgs) -> CliResult<()> {
    let policies = inputs::policies(&a.policies, a.model.lookahead)?;
    let seeds = inputs::seeds(&a.seeds)?;
    let w = inputs::profile(&a.model.profile)?;
    let opts = sim_options(&a.model, a.history)?;
    let series = inputs::series(&a.trace.trace, a.trace.interval_seconds, a.trace.capacity)?;
    make_dir(&a.out)?;

    let mut rows = Vec::new();
    for &seed in &seeds {
        let mut baseline = None;
        for (label, policy) in &policies {
            let report = run(&series, &w, policy, seed, &opts).map_err(|e| input(&format!("policy {label}"), e))?;
            let stem = a.out.join(format!("{label}-seed{seed}"));
            let json = stem.with_extension("json");
            write_json(&json, &report).map_err(|e| output("--out", &json, e))?;
            let csv = stem.with_extension("csv");
            write_interval_log(&csv, &report).map_err(|e| output("--out", &csv, e))?;
            let base = *baseline.get_or_insert(report.committed_samples);
            rows.push(SummaryRow {
                policy: label.clone(),
                seed,
                committed_samples: report.committed_samples,
                rollbacks: report.rollbacks,
                spot_cost: report.spot_cost,
                cost_per_sample: report.cost_per_sample,
                speedup: ratio(report.committed_samples, base),
            });
        }
    }
    write_csv(&a.out.join("summary.csv"), &rows)?;

    println!(
        "{:<20} {:>6} {:>12} {:>9} {:>11} {:>14} {:>8}",
        "policy", "seed", "committed", "rollbacks", "spot_cost", "cost/sample", "speedup"
    );
    for r in &rows {
        println!(
            "{:<20} {:>6} {:>12} {:>9} {:>11.2} {:>14} {:>8.3}",
            r.policy,
            r.seed,
            r.committed_samples,
            r.rollbacks,
            r.spot_cost,
            r.cost_per_sample.map_or("-".to_string(), |c| format!("{c:.3e}")),
            r.speedup
        );
    }
    if policies.len() > 1 {
        println!();
        for (label, _) in &policies[1..] {
            let mine: Vec<f64> = rows
                .iter()
                .filter(|r| r.policy == *label)
                .map(|r| 1.0 / r.speedup)
                .collect();
            println!(
                "mean commit ratio {} / {label} over {} seeds: {:.3}",
                policies[0].0,
                mine.len(),
                mine.iter().sum::<f64>() / mine.len() as f64
            );
        }
    }
    Ok(())
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        if a == 0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        a as f64 / b as f64
    }
}

fn methods(spec: &str) -> CliResult<Vec<ForecastMethod>> {
    if spec == "all" {
        return Ok(ForecastMethod::ALL.to_vec());
    }
    spec.split(',')
        .map(|m| m.trim().parse().map_err(|e| usage("--method", e)))
        .collect()
}

#[derive(Debug, Serialize)]
struct Scores {
    mean_l1: Option<f64>,
    windows: usize,
}

pub fn predict(a: PredictArgs) -> CliResult<()> {
    let series = inputs::series(&a.trace.trace, a.trace.interval_seconds, a.trace.capacity)?;
    let cfg = inputs::forecast_config(series.capacity, a.history, a.lookahead)?;
    let methods = methods(&a.method)?;
    let text = if a.evaluate {
        let mut out = BTreeMap::new();
        for m in methods {
            let windows = evaluate_windows(&series, &cfg, m).map_err(|e| input("--trace", e))?;
            let mean = (!windows.is_empty()).then(|| windows.iter().map(|w| w.l1).sum::<f64>() / windows.len() as f64);
            out.insert(
                m.name(),
                Scores {
                    mean_l1: mean,
                    windows: windows.len(),
                },
            );
        }
        serde_json::to_string_pretty(&out)
    } else {
        let at = a.at.unwrap_or(series.len());
        if at > series.len() || at < a.history {
            return Err(usage(
                "--at",
                format!(
                    "need {} intervals of history before {at}; the trace has {}",
                    a.history,
                    series.len()
                ),
            ));
        }
        let history = &series.counts[at - a.history..at];
        let mut forecasts = BTreeMap::new();
        for m in methods {
            let f = predictor::predict(history, &cfg, m).map_err(|e| input("--trace", e))?;
            forecasts.insert(m.name(), f.values);
        }
        #[derive(Serialize)]
        struct Out<'a> {
            at: usize,
            history: &'a [u32],
            forecasts: BTreeMap<&'static str, Vec<u32>>,
        }
        serde_json::to_string_pretty(&Out { at, history, forecasts })
    }
    .map_err(|e| Failure::Input(e.into()))?;
    emit(a.out.as_deref(), &text)
}

fn emit(out: Option<&Path>, text: &str) -> CliResult<()> {
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                make_dir(dir)?;
            }
            std::fs::write(p, format!("{text}\n")).map_err(|e| output("--out", p, e))
        }
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn optimizer_config(m: &ModelArgs, interval_seconds: f64) -> CliResult<OptimizerConfig> {
    if m.mc_trials == 0 {
        return Err(usage("--mc-trials", "must be >= 1"));
    }
    Ok(OptimizerConfig {
        interval_seconds,
        lookahead: m.lookahead,
        mode: ScenarioMode::Auto {
            trials: m.mc_trials,
            seed: 0,
        },
        costs: inputs::costs(m.cost_table.as_deref())?,
        rollback_penalty: interval_seconds,
    })
}

pub fn optimize(a: OptimizeArgs) -> CliResult<()> {
    if a.model.lookahead == 0 {
        return Err(usage("--lookahead", "must be >= 1"));
    }
    let (mut n_seq, interval) = match (&a.availability, &a.trace) {
        (Some(list), None) => {
            let counts = list
                .split(',')
                .map(|v| {
                    v.trim()
                        .parse::<u32>()
                        .map_err(|e| usage("--availability", format!("{v:?}: {e}")))
                })
                .collect::<CliResult<Vec<_>>>()?;
            let t = a.interval_seconds.unwrap_or(liveput::trace::DEFAULT_INTERVAL_SECONDS);
            if !(t > 0.0 && t.is_finite()) {
                return Err(usage("--interval-seconds", format!("must be positive, got {t}")));
            }
            (counts, t)
        }
        (None, Some(trace)) => {
            let s: IntervalSeries = inputs::series(trace, a.interval_seconds, a.capacity)?;
            if a.at >= s.len() {
                return Err(usage(
                    "--at",
                    format!("{} is past the end of a {}-interval trace", a.at, s.len()),
                ));
            }
            (s.counts[a.at..].to_vec(), s.interval_seconds)
        }
        _ => return Err(usage("--availability/--trace", "give exactly one")),
    };
    n_seq.truncate(a.model.lookahead + 1);
    if n_seq.len() < 2 {
        return Err(usage(
            "--availability",
            "need the current count and at least one future count",
        ));
    }
    let current = match a.current.as_str() {
        "none" => None,
        c => Some(c.parse::<ParallelConfig>().map_err(|e| usage("--current", e))?),
    };
    let w = inputs::profile(&a.model.profile)?;
    let cfg = optimizer_config(&a.model, interval)?;
    let mut opt = LiveputOptimizer::new(w, cfg).map_err(|e| usage("--lookahead/--mc-trials", e))?;
    let plan: Plan = opt.dp_optimize(current, &n_seq).map_err(|e| usage("--current", e))?;
    let text = serde_json::to_string_pretty(&plan).map_err(|e| Failure::Input(e.into()))?;
    emit(a.out.as_deref(), &text)
}

pub fn gen_trace(a: GenTraceArgs) -> CliResult<()> {
    let mut series = inputs::generated(&a.spec, a.interval_seconds)
        .map_err(|f| match f {
            Failure::Usage(e) => usage("--spec", e),
            other => other,
        })?
        .ok_or_else(|| usage("--spec", format!("{:?}: expected synthetic:... or bursty:...", a.spec)))?;
    if let Some(g) = a.gpus_per_instance {
        series = gen_multigpu(&series, g).map_err(|e| usage("--gpus-per-instance", e))?;
    }
    write_series(&a.out, &series).map_err(|e| output("--out", &a.out, e))?;
    let (min, max) = (
        series.counts.iter().min().unwrap_or(&0),
        series.counts.iter().max().unwrap_or(&0),
    );
    println!(
        "wrote {} intervals (capacity {}, range {min}..={max}) to {}",
        series.len(),
        series.capacity,
        a.out.display()
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct BreakdownRow {
    trace: String,
    policy: String,
    seed: u64,
    committed_samples: u64,
    effective_hours: f64,
    migration_hours: f64,
    checkpoint_overhead_hours: f64,
    wasted_rollback_hours: f64,
    idle_hours: f64,
    total_hours: f64,
    /// Allocated instance-hours of the trace.
    instance_hours: f64,
}

impl BreakdownRow {
    fn new(trace: &str, policy: &str, seed: u64, r: &SimReport) -> Self {
        let l = &r.ledger;
        Self {
            trace: trace.to_string(),
            policy: policy.to_string(),
            seed,
            committed_samples: r.committed_samples,
            effective_hours: l.effective / HOUR,
            migration_hours: l.migration / HOUR,
            checkpoint_overhead_hours: l.checkpoint_overhead / HOUR,
            wasted_rollback_hours: l.wasted_rollback / HOUR,
            idle_hours: l.idle / HOUR,
            total_hours: l.total() / HOUR,
            instance_hours: r.instance_seconds / HOUR,
        }
    }
}

pub fn compare(a: CompareArgs) -> CliResult<()> {
    let policies = inputs::policies(&a.policies, a.model.lookahead)?;
    let seeds = inputs::seeds(&a.seeds)?;
    let w = inputs::profile(&a.model.profile)?;
    let opts = sim_options(&a.model, a.history)?;
    let traces = a
        .traces
        .iter()
        .map(|t| Ok((t.clone(), inputs::series(t, a.interval_seconds, a.capacity)?)))
        .collect::<CliResult<Vec<_>>>()?;
    make_dir(&a.out)?;

    let mut rows = Vec::new();
    for (name, series) in &traces {
        for &seed in &seeds {
            for (label, policy) in &policies {
                let r = run(series, &w, policy, seed, &opts).map_err(|e| input(&format!("{name} / {label}"), e))?;
                rows.push(BreakdownRow::new(name, label, seed, &r));
            }
        }
    }
    write_csv(&a.out.join("breakdown.csv"), &rows)?;

    println!(
        "{:<28} {:<16} {:>5} {:>10} {:>10} {:>10} {:>10} {:>10}",
        "trace", "policy", "seed", "effective", "migration", "ckpt", "rollback", "idle"
    );
    for r in &rows {
        let share = |x: f64| format!("{:.1}%", 100.0 * x / r.total_hours.max(f64::MIN_POSITIVE));
        println!(
            "{:<28} {:<16} {:>5} {:>10} {:>10} {:>10} {:>10} {:>10}",
            shorten(&r.trace, 28),
            r.policy,
            r.seed,
            share(r.effective_hours),
            share(r.migration_hours),
            share(r.checkpoint_overhead_hours),
            share(r.wasted_rollback_hours),
            share(r.idle_hours)
        );
    }
    Ok(())
}

fn shorten(s: &str, width: usize) -> String {
    let chars: Vec<char> = s.chars().collect();
    if chars.len() <= width {
        s.to_string()
    } else {
        let tail: String = chars[chars.len() - (width - 3)..].iter().collect();
        format!("...{tail}")
    }
}
