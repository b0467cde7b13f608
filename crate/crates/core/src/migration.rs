//! Reconfiguration after preemptions and allocations.
//!
//! Keeping the pipeline depth allows cheap repairs: intact pipelines are kept,
//! broken ones are patched with same-stage survivors (no parameter movement)
//! and, failing that, with instances that must first receive the stage's
//! parameters. Changing the depth repartitions the whole model. When a stage
//! loses every replica the state can only come back from a checkpoint.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::perf_model::{ParallelConfig, WorkloadProfile};
use crate::preemption::{InstanceId, PreemptionVector, ScenarioSummary, Topology};

/// Reconfiguration overheads in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostTable {
    pub start_process: f64,
    pub rendezvous: f64,
    pub cuda_context: f64,
    pub load_data: f64,
    pub build_model: f64,
    pub update_comm_groups: f64,
    /// Reloading model state from the last checkpoint.
    #[serde(default = "default_restore")]
    pub restore_checkpoint: f64,
}

fn default_restore() -> f64 {
    30.0
}

impl Default for CostTable {
    fn default() -> Self {
        Self {
            start_process: 1.0,
            rendezvous: 5.0,
            cuda_context: 5.0,
            load_data: 5.0,
            build_model: 5.0,
            update_comm_groups: 10.0,
            restore_checkpoint: default_restore(),
        }
    }
}

impl CostTable {
    pub fn zero() -> Self {
        Self {
            start_process: 0.0,
            rendezvous: 0.0,
            cuda_context: 0.0,
            load_data: 0.0,
            build_model: 0.0,
            update_comm_groups: 0.0,
            restore_checkpoint: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.start_process,
            self.rendezvous,
            self.cuda_context,
            self.load_data,
            self.build_model,
            self.update_comm_groups,
            self.restore_checkpoint,
        ];
        if all.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::InvalidArgument("migration costs must be finite and >= 0".into()));
        }
        Ok(())
    }

    /// Bringing up fresh instances, paid once when any joins.
    pub fn join_overhead(&self) -> f64 {
        self.start_process + self.rendezvous + self.cuda_context + self.load_data
    }

    /// Rebuilding the model and communication groups after any change.
    pub fn rebuild_overhead(&self) -> f64 {
        self.build_model + self.update_comm_groups
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MigrationKind {
    None,
    IntraStage,
    InterStage,
    Pipeline,
    /// State reloaded from a checkpoint: after losing a whole stage, or when
    /// resuming from suspension.
    Restart,
}

impl fmt::Display for MigrationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MigrationKind::None => "none",
            MigrationKind::IntraStage => "intra_stage",
            MigrationKind::InterStage => "inter_stage",
            MigrationKind::Pipeline => "pipeline",
            MigrationKind::Restart => "restart",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum Slot {
    Stage {
        pipeline: u32,
        stage: u32,
    },
    Spare,
    /// A newly allocated instance joining the job.
    Fresh,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Move {
    pub instance: InstanceId,
    pub from: Slot,
    pub to: Slot,
    /// Instance that sends the stage parameters, when the destination stage
    /// differs from what the instance held.
    pub param_source: Option<InstanceId>,
}

impl Move {
    pub fn transfers_params(&self) -> bool {
        self.param_source.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MigrationPlan {
    pub kind: MigrationKind,
    pub moves: Vec<Move>,
    pub target: Topology,
    /// Fresh instances placed into the target.
    pub fresh_used: u32,
    pub est_cost: f64,
}

/// Plans the transition of `topo` under preemptions `v` to `target`, with
/// `fresh` newly allocated instances available. `None` suspends training.
pub fn plan_migration(
    topo: &Topology,
    v: &PreemptionVector,
    target: Option<ParallelConfig>,
    fresh: &[InstanceId],
    w: &WorkloadProfile,
    costs: &CostTable,
) -> Result<MigrationPlan> {
    if v.len() != topo.n() as usize {
        return Err(Error::InvalidArgument(format!(
            "preemption vector has length {}, topology has {} instances",
            v.len(),
            topo.n()
        )));
    }
    let order: Vec<InstanceId> = topo.instances().collect();
    let alive = |i: usize| !v.is_preempted(i);
    let survivors: Vec<InstanceId> = (0..order.len()).filter(|&i| alive(i)).map(|i| order[i]).collect();
    let available = survivors.len() as u32 + fresh.len() as u32;

    let Some(target) = target else {
        let mut spares = survivors;
        spares.extend_from_slice(fresh);
        return Ok(MigrationPlan {
            kind: MigrationKind::None,
            moves: Vec::new(),
            target: Topology::idle(spares),
            fresh_used: 0,
            est_cost: 0.0,
        });
    };
    if target.d == 0 || target.p == 0 || target.instances() > available {
        return Err(Error::Unreachable(format!(
            "{target} needs {} instances, {available} available",
            target.instances()
        )));
    }
    if topo.d() == 0 {
        return Ok(restart_plan(&survivors, fresh, target, costs));
    }
    let (d, p) = (topo.d() as usize, topo.p() as usize);
    let slot_alive = |pl: usize, st: usize| alive(pl * p + st);
    if let Some(stage) = (0..p).find(|&st| (0..d).all(|pl| !slot_alive(pl, st))) {
        return Err(Error::RollbackRequired { stage: stage as u32 });
    }
    if target.p as usize != p {
        return Ok(repartition_plan(topo, &survivors, fresh, target, w, costs));
    }

    let grid = topo.grid();
    let intact: Vec<usize> = (0..d).filter(|&pl| (0..p).all(|st| slot_alive(pl, st))).collect();
    let target_d = target.d as usize;
    let keep = intact.len().min(target_d);
    let build = target_d - keep;

    // broken pipelines with the most survivors become the bases of new ones
    let mut broken: Vec<usize> = (0..d).filter(|pl| !intact.contains(pl)).collect();
    broken.sort_by_key(|&pl| std::cmp::Reverse((0..p).filter(|&st| slot_alive(pl, st)).count()));
    let bases: Vec<Option<usize>> = (0..build).map(|i| broken.get(i).copied()).collect();

    let mut new_grid: Vec<Vec<Option<InstanceId>>> = intact[..keep]
        .iter()
        .map(|&pl| grid[pl].iter().map(|&id| Some(id)).collect())
        .collect();
    for base in &bases {
        new_grid.push(
            (0..p)
                .map(|st| base.filter(|&pl| slot_alive(pl, st)).map(|pl| grid[pl][st]))
                .collect(),
        );
    }

    // same-stage survivors outside kept pipelines and bases
    let is_base = |pl: usize| bases.contains(&Some(pl));
    let mut donors: Vec<VecDeque<(usize, InstanceId)>> = (0..p)
        .map(|st| {
            (0..d)
                .filter(|&pl| !intact[..keep].contains(&pl) && !is_base(pl) && slot_alive(pl, st))
                .map(|pl| (pl, grid[pl][st]))
                .collect()
        })
        .collect();

    let mut moves = Vec::new();
    for st in 0..p {
        for (row, target_row) in new_grid.iter_mut().enumerate().skip(keep) {
            if target_row[st].is_none() {
                if let Some((pl, id)) = donors[st].pop_front() {
                    target_row[st] = Some(id);
                    moves.push(Move {
                        instance: id,
                        from: Slot::Stage {
                            pipeline: pl as u32,
                            stage: st as u32,
                        },
                        to: Slot::Stage {
                            pipeline: row as u32,
                            stage: st as u32,
                        },
                        param_source: None,
                    });
                }
            }
        }
    }

    // everything left can take any stage once it has the parameters
    let mut pool: VecDeque<(Slot, InstanceId)> = VecDeque::new();
    for (st, q) in donors.iter().enumerate() {
        for &(pl, id) in q {
            pool.push_back((
                Slot::Stage {
                    pipeline: pl as u32,
                    stage: st as u32,
                },
                id,
            ));
        }
    }
    let spare_offset = d * p;
    for (j, &id) in topo.spares().iter().enumerate() {
        if alive(spare_offset + j) {
            pool.push_back((Slot::Spare, id));
        }
    }
    for &id in fresh {
        pool.push_back((Slot::Fresh, id));
    }
    let sources: Vec<Vec<InstanceId>> = (0..p)
        .map(|st| (0..d).filter(|&pl| slot_alive(pl, st)).map(|pl| grid[pl][st]).collect())
        .collect();
    let mut fresh_used = 0;
    for st in 0..p {
        let mut next_source = 0;
        for (row, target_row) in new_grid.iter_mut().enumerate().skip(keep) {
            if target_row[st].is_none() {
                let (from, id) = pool
                    .pop_front()
                    .ok_or_else(|| Error::Unreachable(format!("no instance left for stage {st} of {target}")))?;
                if from == Slot::Fresh {
                    fresh_used += 1;
                }
                let src = sources[st][next_source % sources[st].len()];
                next_source += 1;
                target_row[st] = Some(id);
                moves.push(Move {
                    instance: id,
                    from,
                    to: Slot::Stage {
                        pipeline: row as u32,
                        stage: st as u32,
                    },
                    param_source: Some(src),
                });
            }
        }
    }

    let grid_out: Vec<Vec<InstanceId>> = new_grid
        .into_iter()
        .map(|row| row.into_iter().map(|s| s.expect("every slot filled")).collect())
        .collect();
    let placed: std::collections::HashSet<InstanceId> = grid_out.iter().flatten().copied().collect();
    let spares: Vec<InstanceId> = survivors
        .iter()
        .chain(fresh)
        .copied()
        .filter(|id| !placed.contains(id))
        .collect();

    let kind = if moves.iter().any(Move::transfers_params) {
        MigrationKind::InterStage
    } else if !moves.is_empty() || !(intact.len() == d && target_d == d) {
        MigrationKind::IntraStage
    } else {
        MigrationKind::None
    };
    let mut plan = MigrationPlan {
        kind,
        moves,
        target: Topology::from_parts(target.p, grid_out, spares),
        fresh_used,
        est_cost: 0.0,
    };
    plan.est_cost = migration_cost(&plan, w, costs, fresh_used);
    Ok(plan)
}

fn layout(ids: &[InstanceId], target: ParallelConfig) -> Topology {
    Topology::from_instances(Some(target), ids).expect("caller checked capacity")
}

fn fresh_needed(survivors: usize, target: ParallelConfig) -> u32 {
    (target.instances() as usize).saturating_sub(survivors) as u32
}

fn repartition_plan(
    topo: &Topology,
    survivors: &[InstanceId],
    fresh: &[InstanceId],
    target: ParallelConfig,
    w: &WorkloadProfile,
    costs: &CostTable,
) -> MigrationPlan {
    let mut ids = survivors.to_vec();
    ids.extend_from_slice(fresh);
    let new = layout(&ids, target);
    let mut old_slot = BTreeMap::new();
    for (pl, row) in topo.grid().iter().enumerate() {
        for (st, &id) in row.iter().enumerate() {
            old_slot.insert(
                id,
                Slot::Stage {
                    pipeline: pl as u32,
                    stage: st as u32,
                },
            );
        }
    }
    let mut moves = Vec::new();
    for (pl, row) in new.grid().iter().enumerate() {
        for (st, &id) in row.iter().enumerate() {
            let from =
                old_slot
                    .get(&id)
                    .copied()
                    .unwrap_or(if fresh.contains(&id) { Slot::Fresh } else { Slot::Spare });
            moves.push(Move {
                instance: id,
                from,
                to: Slot::Stage {
                    pipeline: pl as u32,
                    stage: st as u32,
                },
                param_source: None,
            });
        }
    }
    let fresh_used = fresh_needed(survivors.len(), target);
    let mut plan = MigrationPlan {
        kind: MigrationKind::Pipeline,
        moves,
        target: new,
        fresh_used,
        est_cost: 0.0,
    };
    plan.est_cost = migration_cost(&plan, w, costs, fresh_used);
    plan
}

/// Reloads state from the last checkpoint onto survivors and fresh instances.
pub fn restart_plan(
    survivors: &[InstanceId],
    fresh: &[InstanceId],
    target: ParallelConfig,
    costs: &CostTable,
) -> MigrationPlan {
    let mut ids = survivors.to_vec();
    ids.extend_from_slice(fresh);
    let fresh_used = fresh_needed(survivors.len(), target);
    MigrationPlan {
        kind: MigrationKind::Restart,
        moves: Vec::new(),
        target: layout(&ids, target),
        fresh_used,
        est_cost: restart_cost(costs, fresh_used),
    }
}

pub fn restart_cost(costs: &CostTable, fresh_used: u32) -> f64 {
    costs.restore_checkpoint + join_cost(costs, fresh_used) + costs.rebuild_overhead()
}

fn join_cost(costs: &CostTable, fresh_used: u32) -> f64 {
    if fresh_used > 0 {
        costs.join_overhead()
    } else {
        0.0
    }
}

/// Seconds to carry out `plan`. Parameter transfers run in parallel across
/// senders; each sender serves its receivers one after another.
pub fn migration_cost(plan: &MigrationPlan, w: &WorkloadProfile, costs: &CostTable, fresh_instances: u32) -> f64 {
    let fixed = join_cost(costs, fresh_instances) + costs.rebuild_overhead();
    match plan.kind {
        MigrationKind::None => 0.0,
        MigrationKind::IntraStage => fixed,
        MigrationKind::InterStage => {
            let p = plan.target.p().max(1) as f64;
            let per_move = w.param_bytes_total / p * w.beta + w.alpha;
            let mut per_source: BTreeMap<InstanceId, u32> = BTreeMap::new();
            for m in &plan.moves {
                if let Some(src) = m.param_source {
                    *per_source.entry(src).or_insert(0) += 1;
                }
            }
            let rounds = per_source.values().copied().max().unwrap_or(0);
            fixed + rounds as f64 * per_move
        }
        MigrationKind::Pipeline => fixed + repartition_transfer(plan.target.d(), plan.target.p(), w),
        MigrationKind::Restart => costs.restore_checkpoint + fixed,
    }
}

/// Every new pipeline gathers the full model, one pipeline at a time.
fn repartition_transfer(d: u32, p: u32, w: &WorkloadProfile) -> f64 {
    d as f64 * (w.param_bytes_total * w.beta + p as f64 * w.alpha)
}

/// Outcome of a transition as seen by the optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionCost {
    pub kind: MigrationKind,
    pub seconds: f64,
    pub fresh_used: u32,
}

/// Cost of the plan [`plan_migration`] would produce (or of the restart when
/// it reports a lost stage), from the scenario summary alone.
pub fn summary_cost(
    s: &ScenarioSummary,
    source: Option<ParallelConfig>,
    target: Option<ParallelConfig>,
    fresh: u32,
    w: &WorkloadProfile,
    costs: &CostTable,
) -> Result<TransitionCost> {
    let none = TransitionCost {
        kind: MigrationKind::None,
        seconds: 0.0,
        fresh_used: 0,
    };
    let Some(target) = target else {
        return Ok(none);
    };
    let survivors = s.survivors();
    if target.instances() > survivors + fresh {
        return Err(Error::Unreachable(format!(
            "{target} needs {} instances, {} available",
            target.instances(),
            survivors + fresh
        )));
    }
    let restart = |fresh_used| TransitionCost {
        kind: MigrationKind::Restart,
        seconds: restart_cost(costs, fresh_used),
        fresh_used,
    };
    let Some(source) = source else {
        return Ok(restart(fresh_needed(survivors as usize, target)));
    };
    if s.min_stage_survivors() == 0 {
        return Ok(restart(fresh_needed(survivors as usize, target)));
    }
    if target.p != source.p {
        let fresh_used = fresh_needed(survivors as usize, target);
        return Ok(TransitionCost {
            kind: MigrationKind::Pipeline,
            seconds: join_cost(costs, fresh_used)
                + costs.rebuild_overhead()
                + repartition_transfer(target.d, target.p, w),
            fresh_used,
        });
    }
    let keep = s.intact.min(target.d);
    let build = target.d - keep;
    if keep == source.d && target.d == source.d {
        return Ok(none);
    }
    let mut holes = 0;
    let mut surplus = 0;
    let mut rounds = 0;
    for &alive in &s.stage_survivors {
        let own = alive - keep;
        let h = build.saturating_sub(own);
        holes += h;
        surplus += own.saturating_sub(build);
        rounds = rounds.max(h.div_ceil(alive));
    }
    let fresh_used = holes.saturating_sub(surplus + s.spare_survivors);
    let mut seconds = join_cost(costs, fresh_used) + costs.rebuild_overhead();
    let kind = if holes > 0 {
        seconds += rounds as f64 * (w.param_bytes_total / source.p as f64 * w.beta + w.alpha);
        MigrationKind::InterStage
    } else {
        MigrationKind::IntraStage
    };
    Ok(TransitionCost {
        kind,
        seconds,
        fresh_used,
    })
}
