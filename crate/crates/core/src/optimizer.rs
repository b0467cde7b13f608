//! Committed-sample objective and the lookahead dynamic program.
//!
//! For one interval, the value of moving from configuration `prev` to `next`
//! is `Throughput(next)` times the expected time left after migrating, where
//! the expectation runs over which instances the availability drop removes.
//! The DP chains these values over the predicted availability sequence.

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::migration::{summary_cost, CostTable};
use crate::perf_model::{enumerate_configs, feasible, throughput, ParallelConfig, WorkloadProfile};
use crate::preemption::{ScenarioMode, ScenarioTable};
use crate::trace::DEFAULT_INTERVAL_SECONDS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub interval_seconds: f64,
    pub lookahead: usize,
    pub mode: ScenarioMode,
    pub costs: CostTable,
    /// Seconds of committed work lost when a scenario wipes out a stage and
    /// training rolls back to the last checkpoint.
    #[serde(default = "default_rollback_penalty")]
    pub rollback_penalty: f64,
}

fn default_rollback_penalty() -> f64 {
    DEFAULT_INTERVAL_SECONDS
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            interval_seconds: DEFAULT_INTERVAL_SECONDS,
            lookahead: 12,
            mode: ScenarioMode::default(),
            costs: CostTable::default(),
            rollback_penalty: default_rollback_penalty(),
        }
    }
}

/// One planned interval. `config == None` means training is suspended.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanStep {
    pub interval_index: usize,
    pub config: Option<ParallelConfig>,
    pub expected_committed: f64,
    pub expected_mig_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub steps: Vec<PlanStep>,
    /// Sum of `expected_committed` over the steps.
    pub objective: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionValue {
    pub committed: f64,
    pub mig_cost: f64,
}

const ZERO: TransitionValue = TransitionValue {
    committed: 0.0,
    mig_cost: 0.0,
};

type RowKey = (Option<ParallelConfig>, u32, u32);

/// Candidate states with `n` instances: every configuration that fits, or
/// suspension when none does.
pub fn states(n: u32, w: &WorkloadProfile) -> Vec<Option<ParallelConfig>> {
    let configs = enumerate_configs(n, w);
    if configs.is_empty() {
        vec![None]
    } else {
        configs.into_iter().map(Some).collect()
    }
}

/// Highest-throughput configuration for `n` instances; ties go to more
/// pipelines, then shallower ones. `None` when nothing fits.
pub fn reactive_plan(n: u32, w: &WorkloadProfile) -> Option<ParallelConfig> {
    enumerate_configs(n, w)
        .into_iter()
        .map(|c| (c, throughput(c, w)))
        .filter(|(_, t)| *t > 0.0)
        .max_by(|(a, ta), (b, tb)| ta.total_cmp(tb).then(a.d.cmp(&b.d)).then(b.p.cmp(&a.p)))
        .map(|(c, _)| c)
}

/// Caches scenario tables and per-transition values across calls; a
/// simulation reuses one instance for all its planning steps.
#[derive(Debug)]
pub struct LiveputOptimizer {
    workload: WorkloadProfile,
    config: OptimizerConfig,
    states: HashMap<u32, Arc<Vec<Option<ParallelConfig>>>>,
    tables: HashMap<(Option<ParallelConfig>, u32, u32), Arc<ScenarioTable>>,
    rows: HashMap<RowKey, Arc<Vec<TransitionValue>>>,
}

impl LiveputOptimizer {
    pub fn new(workload: WorkloadProfile, config: OptimizerConfig) -> Result<Self> {
        workload.validate()?;
        config.costs.validate()?;
        if !(config.interval_seconds > 0.0) {
            return Err(Error::InvalidArgument("interval_seconds must be > 0".into()));
        }
        if !(config.rollback_penalty >= 0.0) {
            return Err(Error::InvalidArgument("rollback_penalty must be >= 0".into()));
        }
        Ok(Self {
            workload,
            config,
            states: HashMap::new(),
            tables: HashMap::new(),
            rows: HashMap::new(),
        })
    }

    pub fn workload(&self) -> &WorkloadProfile {
        &self.workload
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    fn states_for(&mut self, n: u32) -> Arc<Vec<Option<ParallelConfig>>> {
        let w = &self.workload;
        self.states.entry(n).or_insert_with(|| Arc::new(states(n, w))).clone()
    }

    fn table(&mut self, prev: Option<ParallelConfig>, n: u32, k: u32) -> Result<Arc<ScenarioTable>> {
        if let Some(t) = self.tables.get(&(prev, n, k)) {
            return Ok(t.clone());
        }
        let t = Arc::new(ScenarioTable::build(prev, n, k, self.config.mode)?);
        self.tables.insert((prev, n, k), t.clone());
        Ok(t)
    }

    /// Values of every candidate next state, aligned with `states(n_next)`.
    fn row(&mut self, prev: Option<ParallelConfig>, n_i: u32, n_next: u32) -> Result<Arc<Vec<TransitionValue>>> {
        if let Some(r) = self.rows.get(&(prev, n_i, n_next)) {
            return Ok(r.clone());
        }
        if let Some(c) = prev {
            if c.instances() > n_i {
                return Err(Error::InvalidArgument(format!(
                    "current config {c} does not fit {n_i} instances"
                )));
            }
        }
        let k = n_i.saturating_sub(n_next);
        let fresh = n_next.saturating_sub(n_i);
        let table = self.table(prev, n_i, k)?;
        let next_states = self.states_for(n_next);
        let t = self.config.interval_seconds;
        let w = &self.workload;
        let costs = &self.config.costs;
        let penalty = self.config.rollback_penalty;
        let total = table.total as f64;

        // A depth change (or a restart) costs the same in every scenario that
        // keeps each stage alive, so one representative per class suffices.
        let lost = |s: &crate::preemption::ScenarioSummary| prev.is_none() || s.min_stage_survivors() == 0;
        let rep_lost = table.entries.iter().find(|(s, _)| lost(s));
        let rep_kept = table.entries.iter().find(|(s, _)| !lost(s));
        let weight_lost: u32 = table.entries.iter().filter(|(s, _)| lost(s)).map(|(_, c)| c).sum();
        let weight_kept = table.total - weight_lost;

        let mut row = Vec::with_capacity(next_states.len());
        for &next in next_states.iter() {
            let Some(nc) = next else {
                row.push(ZERO);
                continue;
            };
            let rate = throughput(nc, w);
            let (mut time, mut cost) = (0.0, 0.0);
            let mut add = |s: &crate::preemption::ScenarioSummary, weight: u32| -> Result<()> {
                let sec = summary_cost(s, prev, next, fresh, w, costs)?.seconds;
                let lost_work = if prev.is_some() && s.min_stage_survivors() == 0 {
                    penalty
                } else {
                    0.0
                };
                time += weight as f64 * (t - sec - lost_work).max(0.0);
                cost += weight as f64 * sec;
                Ok(())
            };
            if prev.is_some_and(|pc| pc.p == nc.p) {
                for (s, c) in &table.entries {
                    add(s, *c)?;
                }
            } else {
                for (rep, weight) in [(rep_lost, weight_lost), (rep_kept, weight_kept)] {
                    if let Some((s, _)) = rep {
                        add(s, weight)?;
                    }
                }
            }
            row.push(TransitionValue {
                committed: rate * time / total,
                mig_cost: cost / total,
            });
        }
        let row = Arc::new(row);
        self.rows.insert((prev, n_i, n_next), row.clone());
        Ok(row)
    }

    /// Expected committed samples and migration seconds for one interval.
    pub fn transition(
        &mut self,
        prev: Option<ParallelConfig>,
        next: Option<ParallelConfig>,
        n_i: u32,
        n_next: u32,
    ) -> Result<TransitionValue> {
        let Some(nc) = next else {
            return Ok(ZERO);
        };
        if nc.instances() > n_next || !feasible(nc, &self.workload) {
            return Ok(ZERO);
        }
        let states = self.states_for(n_next);
        let idx = states
            .iter()
            .position(|s| *s == next)
            .expect("fitting feasible configs are states");
        Ok(self.row(prev, n_i, n_next)?[idx])
    }

    /// Expected samples committed in one interval when moving from `prev` on
    /// `n_i` instances to `next` on `n_next`.
    pub fn phi(
        &mut self,
        prev: Option<ParallelConfig>,
        next: Option<ParallelConfig>,
        n_i: u32,
        n_next: u32,
    ) -> Result<f64> {
        Ok(self.transition(prev, next, n_i, n_next)?.committed)
    }

    /// Total objective of a fixed configuration sequence; `seq[j]` runs
    /// during interval `j + 1` with `n_seq[j + 1]` instances.
    pub fn sequence_value(
        &mut self,
        current: Option<ParallelConfig>,
        seq: &[Option<ParallelConfig>],
        n_seq: &[u32],
    ) -> Result<f64> {
        if n_seq.len() != seq.len() + 1 {
            return Err(Error::InvalidArgument("n_seq must be one longer than seq".into()));
        }
        let mut total = 0.0;
        let mut prev = current;
        for (j, &next) in seq.iter().enumerate() {
            total += self.phi(prev, next, n_seq[j], n_seq[j + 1])?;
            // an unusable target leaves nothing running
            prev = next.filter(|c| c.instances() <= n_seq[j + 1] && feasible(*c, &self.workload));
        }
        Ok(total)
    }

    /// Best configuration sequence for the availability forecast `n_seq`
    /// (current count first, then one count per planned interval).
    pub fn dp_optimize(&mut self, current: Option<ParallelConfig>, n_seq: &[u32]) -> Result<Plan> {
        if n_seq.len() < 2 {
            return Err(Error::InvalidArgument(
                "n_seq needs the current count and at least one forecast".into(),
            ));
        }
        if let Some(c) = current {
            if c.instances() > n_seq[0] || !feasible(c, &self.workload) {
                return Err(Error::InvalidArgument(format!(
                    "current config {c} is not usable on {} instances",
                    n_seq[0]
                )));
            }
        }

        #[derive(Clone, Copy)]
        struct Cell {
            value: f64,
            cost: f64,
            back: usize,
            step: TransitionValue,
        }

        let mut layers: Vec<Arc<Vec<Option<ParallelConfig>>>> = vec![Arc::new(vec![current])];
        let mut cells: Vec<Vec<Cell>> = vec![vec![Cell {
            value: 0.0,
            cost: 0.0,
            back: 0,
            step: ZERO,
        }]];
        for j in 0..n_seq.len() - 1 {
            let next_states = self.states_for(n_seq[j + 1]);
            let mut next_cells: Vec<Option<Cell>> = vec![None; next_states.len()];
            let prev_states = layers[j].clone();
            for (ci, &c) in prev_states.iter().enumerate() {
                let from = cells[j][ci];
                let row = self.row(c, n_seq[j], n_seq[j + 1])?;
                for (ni, tv) in row.iter().enumerate() {
                    let value = from.value + tv.committed;
                    let cost = from.cost + tv.mig_cost;
                    let better = match next_cells[ni] {
                        None => true,
                        Some(best) => value > best.value || (value == best.value && cost < best.cost),
                    };
                    if better {
                        next_cells[ni] = Some(Cell {
                            value,
                            cost,
                            back: ci,
                            step: *tv,
                        });
                    }
                }
            }
            layers.push(next_states);
            cells.push(
                next_cells
                    .into_iter()
                    .map(|c| c.expect("every state reachable"))
                    .collect(),
            );
        }

        let last = layers.len() - 1;
        let rank = |c: &Option<ParallelConfig>| c.map_or((0, 0), |c| (c.d, u32::MAX - c.p));
        let mut best = 0;
        for i in 1..cells[last].len() {
            let (a, b) = (&cells[last][i], &cells[last][best]);
            let ord = a
                .value
                .total_cmp(&b.value)
                .then(b.cost.total_cmp(&a.cost))
                .then(rank(&layers[last][i]).cmp(&rank(&layers[last][best])));
            if ord.is_gt() {
                best = i;
            }
        }
        let objective = cells[last][best].value;
        let mut steps = Vec::with_capacity(last);
        let mut idx = best;
        for j in (1..=last).rev() {
            let cell = cells[j][idx];
            steps.push(PlanStep {
                interval_index: j,
                config: layers[j][idx],
                expected_committed: cell.step.committed,
                expected_mig_cost: cell.step.mig_cost,
            });
            idx = cell.back;
        }
        steps.reverse();
        Ok(Plan { steps, objective })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profiles::{gpt2_like, two_depth_toy};

    fn toy_opt(costs: CostTable) -> LiveputOptimizer {
        LiveputOptimizer::new(
            two_depth_toy(),
            OptimizerConfig {
                mode: ScenarioMode::Exact,
                costs,
                ..OptimizerConfig::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn reactive_examples() {
        let w = two_depth_toy();
        assert_eq!(reactive_plan(6, &w), Some(ParallelConfig::new(2, 3)));
        assert_eq!(reactive_plan(0, &w), None);
        assert_eq!(reactive_plan(1, &w), None);
    }

    #[test]
    fn phi_examples() {
        let mut opt = toy_opt(CostTable::default());
        let c = Some(ParallelConfig::new(2, 3));
        assert_eq!(opt.phi(c, c, 6, 6).unwrap(), 100.0 * 60.0);
        // one more pipeline from three fresh instances
        let grown = Some(ParallelConfig::new(3, 3));
        let v = opt.transition(c, grown, 6, 9).unwrap();
        assert!(v.mig_cost > 0.0 && v.mig_cost < 60.0);
        assert!((v.committed - 150.0 * (60.0 - v.mig_cost)).abs() < 1e-9);
        // depth 4 has no measured rate
        assert_eq!(opt.phi(c, Some(ParallelConfig::new(1, 4)), 6, 6).unwrap(), 0.0);
        assert_eq!(opt.phi(c, Some(ParallelConfig::new(3, 3)), 6, 6).unwrap(), 0.0);
    }

    #[test]
    fn single_step_is_argmax() {
        let mut opt = toy_opt(CostTable::zero());
        let plan = opt.dp_optimize(Some(ParallelConfig::new(2, 3)), &[6, 6]).unwrap();
        assert_eq!(plan.steps.len(), 1);
        assert_eq!(plan.steps[0].config, reactive_plan(6, opt.workload()));
    }

    #[test]
    fn predicted_drop_beats_greedy() {
        let mut opt = toy_opt(CostTable::default());
        let n_seq = [6, 6, 4, 4];
        let plan = opt.dp_optimize(Some(ParallelConfig::new(2, 3)), &n_seq).unwrap();
        let w = two_depth_toy();
        let greedy: Vec<_> = n_seq[1..].iter().map(|&n| reactive_plan(n, &w)).collect();
        let greedy_value = opt
            .sequence_value(Some(ParallelConfig::new(2, 3)), &greedy, &n_seq)
            .unwrap();
        assert!(plan.objective >= greedy_value);
        let configs: Vec<_> = plan.steps.iter().map(|s| s.config).collect();
        assert_eq!(
            opt.sequence_value(Some(ParallelConfig::new(2, 3)), &configs, &n_seq)
                .unwrap(),
            plan.objective
        );
    }

    #[test]
    fn suspended_when_nothing_fits() {
        let mut opt = toy_opt(CostTable::zero());
        let plan = opt.dp_optimize(Some(ParallelConfig::new(1, 2)), &[2, 1, 3]).unwrap();
        assert_eq!(plan.steps[0].config, None);
        assert_eq!(plan.steps[0].expected_committed, 0.0);
        assert_eq!(plan.steps[1].config, Some(ParallelConfig::new(1, 3)));
    }

    #[test]
    fn longer_horizon_never_lowers_objective() {
        let mut opt = LiveputOptimizer::new(gpt2_like(), OptimizerConfig::default()).unwrap();
        let n_seq = [12, 10, 10, 14, 9, 9];
        let mut prev = 0.0;
        for len in 2..=n_seq.len() {
            let v = opt
                .dp_optimize(Some(ParallelConfig::new(3, 4)), &n_seq[..len])
                .unwrap()
                .objective;
            assert!(v >= prev);
            prev = v;
        }
    }
}
