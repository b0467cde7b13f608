//! Interval-level replay of a training job on a spot availability trace.
//!
//! The trace fixes only how many instances are allocated in each interval;
//! which instances disappear is drawn uniformly from the live set under the
//! run seed, independently of the policy, so every policy faces the same
//! events. Each interval the policy picks a configuration, pays for the
//! transition, and commits whole mini-batches in the time that is left.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::migration::{plan_migration, restart_cost, restart_plan, CostTable, MigrationKind};
use crate::optimizer::{reactive_plan, LiveputOptimizer, OptimizerConfig};
use crate::perf_model::{feasible, throughput, ParallelConfig, WorkloadProfile};
use crate::predictor::{predict, ForecastConfig, ForecastMethod};
use crate::preemption::{
    mix_seed, InstanceId, PreemptionVector, ScenarioMode, ScenarioSummary, Topology, DEFAULT_MC_TRIALS,
};
use crate::trace::IntervalSeries;

pub const DEFAULT_CHECKPOINT_PERIOD: u32 = 5;
pub const DEFAULT_SAVE_COST: f64 = 5.0;
pub const DEFAULT_RESTORE_COST: f64 = 30.0;
pub const DEFAULT_RESTART_COST: f64 = 20.0;
pub const DEFAULT_SLOWDOWN: f64 = 0.6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Policy {
    /// Lookahead DP over forecast availability.
    Proactive { lookahead: usize, method: ForecastMethod },
    /// Lookahead DP over the true future availability.
    ProactiveIdeal { lookahead: usize },
    /// Throughput-optimal configuration for the current availability.
    Reactive,
    /// Restart from periodic checkpoints on every preemption.
    Checkpoint {
        period: u32,
        save_cost: f64,
        restore_cost: f64,
        restart_cost: f64,
    },
    /// Fixed-depth pipelines with redundant computation that absorbs
    /// preemptions; `fixed_p = None` uses the best depth at full capacity.
    Redundancy { fixed_p: Option<u32>, slowdown: f64 },
}

impl Policy {
    pub const NAMES: &'static [&'static str] =
        &["proactive", "proactive_ideal", "reactive", "checkpoint", "redundancy"];

    pub fn proactive(lookahead: usize) -> Self {
        Policy::Proactive {
            lookahead,
            method: ForecastMethod::Arima,
        }
    }

    pub fn checkpoint() -> Self {
        Policy::Checkpoint {
            period: DEFAULT_CHECKPOINT_PERIOD,
            save_cost: DEFAULT_SAVE_COST,
            restore_cost: DEFAULT_RESTORE_COST,
            restart_cost: DEFAULT_RESTART_COST,
        }
    }

    pub fn redundancy() -> Self {
        Policy::Redundancy {
            fixed_p: None,
            slowdown: DEFAULT_SLOWDOWN,
        }
    }

    /// Parses `name[:arg]`: `proactive[:method]`, `proactive_ideal`,
    /// `reactive`, `checkpoint[:period]`, `redundancy[:depth]`. `parcae` and
    /// `parcae_ideal` are accepted aliases.
    pub fn parse(spec: &str, lookahead: usize) -> Result<Self> {
        let (name, arg) = match spec.split_once(':') {
            Some((n, a)) => (n.trim(), Some(a.trim())),
            None => (spec.trim(), None),
        };
        let bad_arg = |a: &str| Error::InvalidArgument(format!("bad argument {a:?} for policy {name}"));
        let policy = match name.replace('-', "_").as_str() {
            "proactive" | "parcae" => Policy::Proactive {
                lookahead,
                method: arg
                    .map(ForecastMethod::from_str)
                    .transpose()?
                    .unwrap_or(ForecastMethod::Arima),
            },
            "proactive_ideal" | "parcae_ideal" => Policy::ProactiveIdeal { lookahead },
            "reactive" => Policy::Reactive,
            "checkpoint" => {
                let mut p = Policy::checkpoint();
                if let (Some(a), Policy::Checkpoint { period, .. }) = (arg, &mut p) {
                    *period = a.parse().map_err(|_| bad_arg(a))?;
                }
                p
            }
            "redundancy" => Policy::Redundancy {
                fixed_p: arg.map(|a| a.parse().map_err(|_| bad_arg(a))).transpose()?,
                slowdown: DEFAULT_SLOWDOWN,
            },
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "unknown policy {name:?}; expected one of {:?}",
                    Self::NAMES
                )))
            }
        };
        policy.validate()?;
        Ok(policy)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Policy::Proactive { .. } => "proactive",
            Policy::ProactiveIdeal { .. } => "proactive_ideal",
            Policy::Reactive => "reactive",
            Policy::Checkpoint { .. } => "checkpoint",
            Policy::Redundancy { .. } => "redundancy",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        match *self {
            Policy::Proactive { lookahead, .. } | Policy::ProactiveIdeal { lookahead } if lookahead == 0 => {
                bad("lookahead must be >= 1")
            }
            Policy::Checkpoint {
                period,
                save_cost,
                restore_cost,
                restart_cost,
            } => {
                if period == 0 {
                    return bad("checkpoint period must be >= 1");
                }
                if [save_cost, restore_cost, restart_cost].iter().any(|c| !(*c >= 0.0)) {
                    return bad("checkpoint costs must be >= 0");
                }
                Ok(())
            }
            Policy::Redundancy { fixed_p, slowdown } => {
                if !(slowdown > 0.0 && slowdown <= 1.0) {
                    return bad("slowdown must be in (0, 1]");
                }
                if fixed_p == Some(0) {
                    return bad("fixed depth must be >= 1");
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    pub history_len: usize,
    pub mc_trials: u32,
    pub costs: CostTable,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            history_len: 12,
            mc_trials: DEFAULT_MC_TRIALS,
            costs: CostTable::default(),
        }
    }
}

/// Instance-seconds by how they were spent.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct GpuLedger {
    pub effective: f64,
    pub migration: f64,
    pub checkpoint_overhead: f64,
    pub wasted_rollback: f64,
    pub idle: f64,
}

impl GpuLedger {
    pub fn total(&self) -> f64 {
        self.effective + self.migration + self.checkpoint_overhead + self.wasted_rollback + self.idle
    }

    fn minus(&self, o: &GpuLedger) -> GpuLedger {
        GpuLedger {
            effective: self.effective - o.effective,
            migration: self.migration - o.migration,
            checkpoint_overhead: self.checkpoint_overhead - o.checkpoint_overhead,
            wasted_rollback: self.wasted_rollback - o.wasted_rollback,
            idle: self.idle - o.idle,
        }
    }

    pub fn hours(&self) -> GpuLedger {
        let h = |s: f64| s / 3600.0;
        GpuLedger {
            effective: h(self.effective),
            migration: h(self.migration),
            checkpoint_overhead: h(self.checkpoint_overhead),
            wasted_rollback: h(self.wasted_rollback),
            idle: h(self.idle),
        }
    }
}

/// One row of the per-interval log. Ledger values are the changes made
/// during the interval, including reclassification of earlier work lost to a
/// rollback.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalRecord {
    pub interval: usize,
    pub available: u32,
    pub config: Option<ParallelConfig>,
    pub throughput: f64,
    /// Net change of committed samples (negative after a rollback).
    pub commits: i64,
    pub migration_kind: MigrationKind,
    pub migration_seconds: f64,
    pub ledger: GpuLedger,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub policy: String,
    pub seed: u64,
    pub interval_seconds: f64,
    pub intervals: Vec<IntervalRecord>,
    pub committed_samples: u64,
    pub committed_tokens: u64,
    pub wall_seconds: f64,
    pub instance_seconds: f64,
    /// Instance-seconds by category.
    pub ledger: GpuLedger,
    pub spot_cost: f64,
    pub ondemand_cost: f64,
    /// Spot cost per committed sample; `None` without commits.
    pub cost_per_sample: Option<f64>,
    pub epochs_completed: u64,
    pub rollbacks: u32,
    pub exactly_once_violations: u64,
}

/// Tracks which sample indices of which epoch have been committed.
#[derive(Debug, Clone)]
pub struct SampleManager {
    epoch_size: u64,
    pending: BTreeMap<u64, VecDeque<Range<u64>>>,
    opened: u64,
    log: Vec<(u64, Range<u64>)>,
    committed: u64,
}

impl SampleManager {
    pub fn new(epoch_size: u64) -> Self {
        assert!(epoch_size > 0);
        Self {
            epoch_size,
            pending: BTreeMap::new(),
            opened: 0,
            log: Vec::new(),
            committed: 0,
        }
    }

    pub fn committed(&self) -> u64 {
        self.committed
    }

    /// Commits the next `n` pending samples, opening epochs as needed.
    pub fn commit(&mut self, mut n: u64) {
        self.committed += n;
        while n > 0 {
            let epoch = match self.pending.keys().next() {
                Some(&e) => e,
                None => {
                    let e = self.opened;
                    self.opened += 1;
                    self.pending.insert(e, std::iter::once(0..self.epoch_size).collect());
                    e
                }
            };
            let queue = self.pending.get_mut(&epoch).unwrap();
            let r = queue.pop_front().unwrap();
            let take = n.min(r.end - r.start);
            let mid = r.start + take;
            if mid < r.end {
                queue.push_front(mid..r.end);
            }
            if queue.is_empty() {
                self.pending.remove(&epoch);
            }
            self.log.push((epoch, r.start..mid));
            n -= take;
        }
    }

    pub fn mark(&self) -> usize {
        self.log.len()
    }

    /// Returns everything committed after `mark` to the pending pool.
    pub fn rollback(&mut self, mark: usize) -> u64 {
        let mut undone = 0;
        while self.log.len() > mark {
            let (epoch, r) = self.log.pop().unwrap();
            undone += r.end - r.start;
            self.pending.entry(epoch).or_default().push_front(r);
        }
        self.committed -= undone;
        undone
    }

    pub fn epochs_completed(&self) -> u64 {
        self.opened - self.pending.len() as u64
    }

    /// Samples committed twice within an epoch, plus samples never committed
    /// in an epoch that is complete.
    pub fn violations(&self) -> u64 {
        let mut by_epoch: BTreeMap<u64, Vec<Range<u64>>> = BTreeMap::new();
        for (e, r) in &self.log {
            by_epoch.entry(*e).or_default().push(r.clone());
        }
        let mut bad = 0;
        for (e, mut ranges) in by_epoch {
            ranges.sort_by_key(|r| r.start);
            let mut covered = 0;
            let mut end = 0;
            for r in &ranges {
                if r.start < end {
                    bad += end.min(r.end) - r.start;
                }
                end = end.max(r.end);
                covered += r.end - r.start;
            }
            if !self.pending.contains_key(&e) && covered < self.epoch_size {
                bad += self.epoch_size - covered;
            }
        }
        bad
    }
}

/// Keeps the planned configuration when it fits; otherwise drops pipelines,
/// and failing that switches to the deepest feasible single pipeline.
pub fn adjust_config(planned: Option<ParallelConfig>, n: u32, w: &WorkloadProfile) -> Option<ParallelConfig> {
    let Some(planned) = planned else {
        return reactive_plan(n, w);
    };
    if planned.instances() <= n {
        return Some(planned);
    }
    let d = n / planned.p;
    if d >= 1 {
        return Some(ParallelConfig::new(d, planned.p));
    }
    (1..=n)
        .rev()
        .map(|p| ParallelConfig::new(1, p))
        .find(|&c| feasible(c, w) && throughput(c, w) > 0.0)
}

/// Adds pipelines at the planned depth for instances beyond the forecast.
/// Pipelines the plan held back on purpose stay held back.
fn widen(planned: Option<ParallelConfig>, predicted: u32, n: u32, w: &WorkloadProfile) -> Option<ParallelConfig> {
    let c = planned?;
    if n <= predicted || c.instances() > predicted {
        return planned;
    }
    let spare = (predicted - c.instances()) % c.p;
    let wider = ParallelConfig::new(c.d + (n - predicted + spare) / c.p, c.p);
    if wider != c && feasible(wider, w) && throughput(wider, w) > throughput(c, w) {
        Some(wider)
    } else {
        planned
    }
}

/// Instances preempted and allocated at the start of each interval.
fn instance_events(counts: &[u32], seed: u64) -> Vec<(Vec<InstanceId>, Vec<InstanceId>)> {
    let mut live: Vec<InstanceId> = (0..counts.first().copied().unwrap_or(0)).collect();
    let mut next_id = live.len() as InstanceId;
    let mut out = vec![(Vec::new(), Vec::new())];
    for i in 1..counts.len() {
        let (prev, now) = (counts[i - 1], counts[i]);
        let mut preempted = Vec::new();
        let mut fresh = Vec::new();
        if now < prev {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, &[i as u32]));
            let mut idx = rand::seq::index::sample(&mut rng, live.len(), (prev - now) as usize).into_vec();
            idx.sort_unstable();
            for &j in idx.iter().rev() {
                preempted.push(live.remove(j));
            }
            preempted.sort_unstable();
        } else {
            for _ in prev..now {
                fresh.push(next_id);
                live.push(next_id);
                next_id += 1;
            }
        }
        out.push((preempted, fresh));
    }
    out
}

struct Sim<'a> {
    w: &'a WorkloadProfile,
    t: f64,
    cfg: Option<ParallelConfig>,
    topo: Topology,
    samples: SampleManager,
    ledger: GpuLedger,
    /// Samples of an unfinished mini-batch and the instance-seconds spent on them.
    carry: f64,
    carry_seconds: f64,
    /// Committed-work seconds since the last checkpoint.
    effective_since: f64,
    mark: usize,
    rollbacks: u32,
    records: Vec<IntervalRecord>,
}

impl<'a> Sim<'a> {
    fn drop_carry(&mut self) {
        self.ledger.wasted_rollback += self.carry_seconds;
        self.carry = 0.0;
        self.carry_seconds = 0.0;
    }

    fn checkpoint(&mut self) {
        self.mark = self.samples.mark();
        self.effective_since = 0.0;
    }

    fn rollback(&mut self) {
        self.samples.rollback(self.mark);
        self.ledger.effective -= self.effective_since;
        self.ledger.wasted_rollback += self.effective_since;
        self.effective_since = 0.0;
        self.drop_carry();
        self.rollbacks += 1;
    }

    /// Runs one interval at `cfg` after `mig` seconds of reconfiguration and
    /// `save` seconds of checkpointing.
    #[allow(clippy::too_many_arguments)]
    fn account(
        &mut self,
        interval: usize,
        n: u32,
        kind: MigrationKind,
        mig: f64,
        save: f64,
        slowdown: f64,
        keep_carry: bool,
        before: GpuLedger,
        committed_before: u64,
    ) {
        let t = self.t;
        if !keep_carry {
            self.drop_carry();
        }
        let mut rate = 0.0;
        match self.cfg {
            None => {
                self.drop_carry();
                self.ledger.idle += n as f64 * t;
            }
            Some(cfg) => {
                let used = cfg.instances() as f64;
                self.ledger.idle += (n as f64 - used) * t;
                let mig = mig.min(t);
                let save = save.min(t - mig);
                let t_eff = t - mig - save;
                self.ledger.migration += used * mig;
                self.ledger.checkpoint_overhead += used * save;
                // redundant computation is overhead, not progress
                self.ledger.checkpoint_overhead += used * t_eff * (1.0 - slowdown);
                rate = throughput(cfg, self.w) * slowdown;
                let work = self.carry + rate * t_eff;
                let seconds = self.carry_seconds + used * t_eff * slowdown;
                let batch = self.w.samples_per_iteration(cfg.d);
                let batches = (work / batch + 1e-9).floor();
                let commits = (batches * batch).min(work);
                let done = if work > 0.0 { commits / work } else { 0.0 };
                let done_seconds = seconds * done;
                self.ledger.effective += done_seconds;
                self.effective_since += done_seconds;
                self.carry = work - commits;
                self.carry_seconds = seconds - done_seconds;
                self.samples.commit(commits.round() as u64);
            }
        }
        self.records.push(IntervalRecord {
            interval,
            available: n,
            config: self.cfg,
            throughput: rate,
            commits: self.samples.committed() as i64 - committed_before as i64,
            migration_kind: kind,
            migration_seconds: mig,
            ledger: self.ledger.minus(&before),
        });
    }
}

/// Replays `series` under `policy`. Deterministic in all inputs.
pub fn run(
    series: &IntervalSeries,
    w: &WorkloadProfile,
    policy: &Policy,
    seed: u64,
    opts: &SimOptions,
) -> Result<SimReport> {
    w.validate()?;
    policy.validate()?;
    opts.costs.validate()?;
    if series.is_empty() {
        return Err(Error::InvalidSeries("empty series".into()));
    }
    let counts = &series.counts;
    let t = series.interval_seconds;
    let events = instance_events(counts, seed);
    let costs = &opts.costs;

    let mut optimizer = match policy {
        Policy::Proactive { lookahead, .. } | Policy::ProactiveIdeal { lookahead } => Some(LiveputOptimizer::new(
            w.clone(),
            OptimizerConfig {
                interval_seconds: t,
                lookahead: *lookahead,
                mode: ScenarioMode::Auto {
                    trials: opts.mc_trials.max(1),
                    seed,
                },
                costs: *costs,
                rollback_penalty: t,
            },
        )?),
        _ => None,
    };
    let forecast_cfg = match policy {
        Policy::Proactive { lookahead, .. } => {
            let mut f = ForecastConfig::new(series.capacity).with_lookahead(*lookahead);
            f.history_len = opts.history_len;
            f.validate()?;
            Some(f)
        }
        _ => None,
    };
    let fixed_depth = match policy {
        Policy::Redundancy { fixed_p, .. } => Some(match fixed_p {
            Some(p) => *p,
            None => reactive_plan(series.capacity, w).map_or(1, |c| c.p),
        }),
        _ => None,
    };
    let redundancy_target = |n: u32| {
        let p = fixed_depth.unwrap();
        let c = ParallelConfig::new(n / p, p);
        (c.d >= 1 && feasible(c, w)).then_some(c)
    };

    let mut sim = Sim {
        w,
        t,
        cfg: None,
        topo: Topology::idle((0..counts[0]).collect()),
        samples: SampleManager::new(w.epoch_size.max(1)),
        ledger: GpuLedger::default(),
        carry: 0.0,
        carry_seconds: 0.0,
        effective_since: 0.0,
        mark: 0,
        rollbacks: 0,
        records: Vec::with_capacity(counts.len()),
    };
    let mut planned: Option<ParallelConfig> = None;
    let mut predicted = 0;

    for (i, &n) in counts.iter().enumerate() {
        let before = sim.ledger;
        let committed_before = sim.samples.committed();
        let (preempted, fresh) = &events[i];

        if i == 0 {
            let target = match policy {
                Policy::Redundancy { .. } => redundancy_target(n),
                _ => reactive_plan(n, w),
            };
            sim.cfg = target;
            sim.topo = Topology::from_instances(target, &sim.topo.instances().collect::<Vec<_>>())?;
            sim.checkpoint();
            let slowdown = match policy {
                Policy::Redundancy { slowdown, .. } => *slowdown,
                _ => 1.0,
            };
            sim.account(
                i,
                n,
                MigrationKind::None,
                0.0,
                0.0,
                slowdown,
                true,
                before,
                committed_before,
            );
        } else {
            match policy {
                Policy::Proactive { .. } | Policy::ProactiveIdeal { .. } | Policy::Reactive => {
                    let target = match policy {
                        Policy::Reactive => reactive_plan(n, w),
                        _ => adjust_config(widen(planned, predicted, n, w), n, w),
                    };
                    let order: Vec<InstanceId> = sim.topo.instances().collect();
                    let idx: Vec<usize> = order
                        .iter()
                        .enumerate()
                        .filter(|(_, id)| preempted.binary_search(id).is_ok())
                        .map(|(j, _)| j)
                        .collect();
                    let v = PreemptionVector::from_indices(order.len() as u32, &idx);
                    let lost = sim.topo.d() > 0 && ScenarioSummary::of(&sim.topo, &v).min_stage_survivors() == 0;
                    let plan = if lost {
                        sim.rollback();
                        let survivors: Vec<InstanceId> = order
                            .iter()
                            .copied()
                            .filter(|id| preempted.binary_search(id).is_err())
                            .collect();
                        let idle = Topology::idle(survivors.clone());
                        match target {
                            Some(c) => restart_plan(&survivors, fresh, c, costs),
                            None => plan_migration(&idle, &PreemptionVector::none(idle.n()), None, fresh, w, costs)?,
                        }
                    } else {
                        plan_migration(&sim.topo, &v, target, fresh, w, costs)?
                    };
                    let keep = plan.kind == MigrationKind::None && target == sim.cfg;
                    sim.cfg = target;
                    sim.topo = plan.target.clone();
                    sim.checkpoint();
                    sim.account(i, n, plan.kind, plan.est_cost, 0.0, 1.0, keep, before, committed_before);
                }
                Policy::Checkpoint {
                    period,
                    save_cost,
                    restore_cost,
                    restart_cost,
                } => {
                    let target = reactive_plan(n, w);
                    let (mut kind, mut mig, mut save) = (MigrationKind::None, 0.0, 0.0);
                    if !preempted.is_empty() && sim.cfg.is_some() {
                        sim.rollback();
                        if target.is_some() {
                            kind = MigrationKind::Restart;
                            mig = restart_cost + restore_cost;
                        }
                    } else if target != sim.cfg && target.is_some() {
                        kind = MigrationKind::Restart;
                        if sim.cfg.is_some() {
                            save = *save_cost;
                            mig = *restart_cost;
                        } else {
                            mig = restart_cost + restore_cost;
                        }
                        sim.checkpoint();
                    }
                    if target.is_some() && save == 0.0 && (i as u32).is_multiple_of(*period) {
                        save = *save_cost;
                        sim.checkpoint();
                    }
                    let keep = kind == MigrationKind::None && target == sim.cfg;
                    sim.cfg = target;
                    sim.account(i, n, kind, mig, save, 1.0, keep, before, committed_before);
                }
                Policy::Redundancy { slowdown, .. } => {
                    let target = redundancy_target(n);
                    let (kind, mig) = match (sim.cfg, target) {
                        (_, None) => (MigrationKind::None, 0.0),
                        (None, Some(c)) => (
                            MigrationKind::Restart,
                            restart_cost(costs, fresh.len().min(c.instances() as usize) as u32),
                        ),
                        (Some(old), Some(c)) if c.d > old.d => (
                            MigrationKind::InterStage,
                            costs.join_overhead() + costs.rebuild_overhead(),
                        ),
                        (Some(old), Some(c)) if c != old => (MigrationKind::IntraStage, 0.0),
                        _ => (MigrationKind::None, 0.0),
                    };
                    let keep = mig == 0.0 && target == sim.cfg;
                    sim.cfg = target;
                    sim.checkpoint();
                    sim.account(i, n, kind, mig, 0.0, *slowdown, keep, before, committed_before);
                }
            }
        }

        // plan the next interval
        if let (Some(opt), true) = (optimizer.as_mut(), i + 1 < counts.len()) {
            let remaining = counts.len() - 1 - i;
            let future: Vec<u32> = match policy {
                Policy::ProactiveIdeal { lookahead } => counts[i + 1..=i + (*lookahead).min(remaining)].to_vec(),
                Policy::Proactive { lookahead, method } => {
                    let fc = forecast_cfg.as_ref().unwrap();
                    let h = fc.history_len;
                    let mut history: Vec<u32> = counts[i.saturating_sub(h - 1)..=i].to_vec();
                    while history.len() < h {
                        history.insert(0, history[0]);
                    }
                    let mut f = predict(&history, fc, *method)?.values;
                    f.truncate((*lookahead).min(remaining));
                    f
                }
                _ => unreachable!(),
            };
            let mut n_seq = Vec::with_capacity(future.len() + 1);
            n_seq.push(n);
            n_seq.extend(future);
            let plan = opt.dp_optimize(sim.cfg, &n_seq)?;
            planned = plan.steps[0].config;
            predicted = n_seq[1];
        }
    }
    let unfinished = sim.carry_seconds;
    sim.drop_carry();
    if let Some(last) = sim.records.last_mut() {
        last.ledger.wasted_rollback += unfinished;
    }

    let instance_seconds = series.instance_seconds();
    let hours = instance_seconds / 3600.0;
    let committed = sim.samples.committed();
    let spot_cost = hours * w.spot_price;
    Ok(SimReport {
        policy: policy.name().to_string(),
        seed,
        interval_seconds: t,
        committed_samples: committed,
        committed_tokens: committed * w.tokens_per_sample as u64,
        wall_seconds: counts.len() as f64 * t,
        instance_seconds,
        ledger: sim.ledger,
        spot_cost,
        ondemand_cost: hours * w.ondemand_price,
        cost_per_sample: (committed > 0).then(|| spot_cost / committed as f64),
        epochs_completed: sim.samples.epochs_completed(),
        rollbacks: sim.rollbacks,
        exactly_once_violations: sim.samples.violations(),
        intervals: sim.records,
    })
}
