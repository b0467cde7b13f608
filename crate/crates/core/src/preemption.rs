//! Preemption scenarios over a data/pipeline-parallel topology.
//!
//! Every allocated instance is equally likely to be preempted, so a scenario
//! with `k` preemptions among `N` instances is a uniformly random `k`-subset.
//! Scenarios are either enumerated exactly or sampled with a seeded
//! Monte-Carlo sampler, and summarized by the quantities migration planning
//! depends on.

use std::collections::BTreeMap;

use itertools::Itertools;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::perf_model::{throughput, ParallelConfig, WorkloadProfile};

pub type InstanceId = u32;

/// Upper bound on exhaustively enumerated scenarios.
pub const ENUMERATION_CAP: u128 = 1_000_000;
/// Default number of Monte-Carlo trials when enumeration is too large.
pub const DEFAULT_MC_TRIALS: u32 = 1000;
/// `ScenarioMode::Auto` enumerates when `C(N, k)` is at most this.
pub const AUTO_EXACT_LIMIT: u128 = 20_000;

/// How the expectation over preemption scenarios is taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ScenarioMode {
    Exact,
    MonteCarlo {
        trials: u32,
        seed: u64,
    },
    /// Exact when the scenario space is small, Monte-Carlo otherwise.
    Auto {
        trials: u32,
        seed: u64,
    },
}

impl Default for ScenarioMode {
    fn default() -> Self {
        ScenarioMode::Auto {
            trials: DEFAULT_MC_TRIALS,
            seed: 0,
        }
    }
}

/// Instance placement: `grid[d][p]` holds the instance running stage `p` of
/// pipeline `d`; `spares` are allocated but unassigned.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    depth: u32,
    grid: Vec<Vec<InstanceId>>,
    spares: Vec<InstanceId>,
}

impl Topology {
    /// Lays out instances `0..n` row-major over `cfg`, the rest as spares.
    pub fn new(cfg: ParallelConfig, n: u32) -> Result<Self> {
        let ids: Vec<_> = (0..n).collect();
        Self::from_instances(Some(cfg), &ids)
    }

    /// Lays out `ids` in order over `cfg` (or all as spares when `None`).
    pub fn from_instances(cfg: Option<ParallelConfig>, ids: &[InstanceId]) -> Result<Self> {
        let Some(cfg) = cfg else {
            return Ok(Self::idle(ids.to_vec()));
        };
        let used = cfg.instances() as usize;
        if cfg.d == 0 || cfg.p == 0 || used > ids.len() {
            return Err(Error::InvalidArgument(format!(
                "config {cfg} does not fit {} instances",
                ids.len()
            )));
        }
        let grid = ids[..used].chunks(cfg.p as usize).map(<[InstanceId]>::to_vec).collect();
        Ok(Self {
            depth: cfg.p,
            grid,
            spares: ids[used..].to_vec(),
        })
    }

    /// No pipelines; every instance is a spare.
    pub fn idle(spares: Vec<InstanceId>) -> Self {
        Self {
            depth: 0,
            grid: Vec::new(),
            spares,
        }
    }

    pub(crate) fn from_parts(depth: u32, grid: Vec<Vec<InstanceId>>, spares: Vec<InstanceId>) -> Self {
        debug_assert!(grid.iter().all(|row| row.len() == depth as usize));
        Self { depth, grid, spares }
    }

    pub fn d(&self) -> u32 {
        self.grid.len() as u32
    }

    pub fn p(&self) -> u32 {
        self.depth
    }

    pub fn n(&self) -> u32 {
        self.d() * self.depth + self.spares.len() as u32
    }

    pub fn spare_count(&self) -> u32 {
        self.spares.len() as u32
    }

    pub fn config(&self) -> Option<ParallelConfig> {
        (self.d() > 0).then(|| ParallelConfig::new(self.d(), self.depth))
    }

    pub fn grid(&self) -> &[Vec<InstanceId>] {
        &self.grid
    }

    pub fn spares(&self) -> &[InstanceId] {
        &self.spares
    }

    /// Instances in preemption-vector order: slots row-major, then spares.
    pub fn instances(&self) -> impl Iterator<Item = InstanceId> + '_ {
        self.grid.iter().flatten().chain(self.spares.iter()).copied()
    }
}

/// `v[k]` is true when the `k`-th instance (in [`Topology::instances`] order)
/// is preempted.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PreemptionVector(pub Vec<bool>);

impl PreemptionVector {
    pub fn none(n: u32) -> Self {
        Self(vec![false; n as usize])
    }

    pub fn from_indices(n: u32, preempted: &[usize]) -> Self {
        let mut v = vec![false; n as usize];
        for &i in preempted {
            v[i] = true;
        }
        Self(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn count(&self) -> u32 {
        self.0.iter().filter(|&&b| b).count() as u32
    }

    pub fn is_preempted(&self, index: usize) -> bool {
        self.0[index]
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i)
    }
}

/// `C(n, k)` without overflow for the sizes used here.
pub fn binomial(n: u32, k: u32) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k) as u128;
    let n = n as u128;
    (0..k).fold(1u128, |acc, i| acc * (n - i) / (i + 1))
}

fn check_counts(n: u32, k: u32) -> Result<()> {
    if k > n {
        return Err(Error::InvalidArgument(format!("cannot preempt {k} of {n} instances")));
    }
    Ok(())
}

/// Every `k`-subset of `n` instances, once each, in lexicographic order.
pub fn enumerate_vectors(n: u32, k: u32) -> Result<Vec<PreemptionVector>> {
    check_counts(n, k)?;
    let count = binomial(n, k);
    if count > ENUMERATION_CAP {
        return Err(Error::EnumerationCap {
            n,
            k,
            count,
            cap: ENUMERATION_CAP,
        });
    }
    Ok((0..n as usize)
        .combinations(k as usize)
        .map(|idx| PreemptionVector::from_indices(n, &idx))
        .collect())
}

/// `trials` uniform `k`-subsets, deterministic under `seed`.
///
/// Draws are systematic over the lexicographic ranks of all subsets with one
/// random offset: every subset is drawn with the same expected frequency
/// `trials / C(n, k)`, and when `trials >= C(n, k)` each appears either
/// `floor` or `ceil` of that many times.
pub fn sample_vectors(n: u32, k: u32, trials: u32, seed: u64) -> Result<Vec<PreemptionVector>> {
    check_counts(n, k)?;
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(trials as usize);
    sample_subsets(n, k, trials, &mut rng, |idx| {
        out.push(PreemptionVector::from_indices(n, idx))
    });
    Ok(out)
}

/// Feeds `trials` subsets to `f`; see [`sample_vectors`].
fn sample_subsets(n: u32, k: u32, trials: u32, rng: &mut ChaCha8Rng, mut f: impl FnMut(&[usize])) {
    let total = binomial(n, k);
    let mut idx = Vec::with_capacity(k as usize);
    match total.checked_mul(trials as u128) {
        Some(_) if total > 0 => {
            let offset = rng.gen_range(0..total);
            for t in 0..trials as u128 {
                let rank = (t * total + offset) / trials as u128;
                unrank_subset(n, k, rank, &mut idx);
                f(&idx);
            }
        }
        _ => {
            for _ in 0..trials {
                let drawn = rand::seq::index::sample(rng, n as usize, k as usize).into_vec();
                f(&drawn);
            }
        }
    }
}

/// The `rank`-th `k`-subset of `0..n` in lexicographic order.
fn unrank_subset(n: u32, k: u32, mut rank: u128, out: &mut Vec<usize>) {
    out.clear();
    let mut next = 0;
    for left in (1..=k).rev() {
        loop {
            // subsets that start with `next` among the remaining elements
            let with = binomial(n - next - 1, left - 1);
            if rank < with {
                break;
            }
            rank -= with;
            next += 1;
        }
        out.push(next as usize);
        next += 1;
    }
}

fn check_vector(topo: &Topology, v: &PreemptionVector) -> Result<()> {
    if v.len() != topo.n() as usize {
        return Err(Error::InvalidArgument(format!(
            "preemption vector has length {}, topology has {} instances",
            v.len(),
            topo.n()
        )));
    }
    Ok(())
}

/// Surviving instances per stage after applying `v`.
pub fn stage_survivors(topo: &Topology, v: &PreemptionVector) -> Vec<u32> {
    let p = topo.p() as usize;
    let mut alive = vec![0u32; p];
    for d in 0..topo.d() as usize {
        for (s, slot) in alive.iter_mut().enumerate() {
            if !v.is_preempted(d * p + s) {
                *slot += 1;
            }
        }
    }
    alive
}

/// Complete pipelines after `v`. Without intra-stage migration only untouched
/// pipelines count; with it, same-stage survivors can be regrouped, so the
/// bound is the smallest per-stage survivor count (spares hold no state).
pub fn surviving_pipelines(topo: &Topology, v: &PreemptionVector, allow_intra_stage: bool) -> Result<u32> {
    check_vector(topo, v)?;
    if topo.d() == 0 {
        return Ok(0);
    }
    let p = topo.p() as usize;
    Ok(if allow_intra_stage {
        stage_survivors(topo, v).into_iter().min().unwrap_or(0).min(topo.d())
    } else {
        (0..topo.d() as usize)
            .filter(|&d| (0..p).all(|s| !v.is_preempted(d * p + s)))
            .count() as u32
    })
}

/// Throughput after `v` once broken pipelines are regrouped.
pub fn conditional_throughput(topo: &Topology, v: &PreemptionVector, w: &WorkloadProfile) -> Result<f64> {
    let d = surviving_pipelines(topo, v, true)?;
    Ok(if d == 0 {
        0.0
    } else {
        throughput(ParallelConfig::new(d, topo.p()), w)
    })
}

/// Expected throughput of `cfg` on `n` instances when `k` of them are
/// preempted uniformly at random.
pub fn expected_liveput(cfg: ParallelConfig, n: u32, k: u32, w: &WorkloadProfile, mode: ScenarioMode) -> Result<f64> {
    let topo = Topology::new(cfg, n)?;
    let vectors = scenario_vectors(n, k, mode)?;
    let mut sum = 0.0;
    for v in &vectors {
        sum += conditional_throughput(&topo, v, w)?;
    }
    Ok(sum / vectors.len() as f64)
}

fn scenario_vectors(n: u32, k: u32, mode: ScenarioMode) -> Result<Vec<PreemptionVector>> {
    match mode {
        ScenarioMode::Exact => enumerate_vectors(n, k),
        ScenarioMode::MonteCarlo { trials, seed } => sample_vectors(n, k, trials, seed),
        ScenarioMode::Auto { trials, seed } => {
            if binomial(n, k) <= AUTO_EXACT_LIMIT {
                enumerate_vectors(n, k)
            } else {
                sample_vectors(n, k, trials, seed)
            }
        }
    }
}

/// What migration planning needs to know about one scenario. Stage survivor
/// counts are sorted, since planning costs are symmetric under stage
/// relabeling.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub stage_survivors: Vec<u32>,
    /// Pipelines with no preempted stage.
    pub intact: u32,
    pub spare_survivors: u32,
}

impl ScenarioSummary {
    pub fn of(topo: &Topology, v: &PreemptionVector) -> Self {
        let p = topo.p() as usize;
        let d = topo.d() as usize;
        let mut stage_survivors = stage_survivors(topo, v);
        stage_survivors.sort_unstable();
        let intact = (0..d).filter(|&i| (0..p).all(|s| !v.is_preempted(i * p + s))).count() as u32;
        let spare_survivors = (d * p..v.len()).filter(|&i| !v.is_preempted(i)).count() as u32;
        Self {
            stage_survivors,
            intact,
            spare_survivors,
        }
    }

    /// Summary from the preempted positions alone.
    fn from_preempted(
        d: u32,
        p: u32,
        spares: u32,
        preempted: &[usize],
        stage_loss: &mut [u32],
        hit: &mut [bool],
    ) -> Self {
        stage_loss.iter_mut().for_each(|x| *x = 0);
        hit.iter_mut().for_each(|x| *x = false);
        let slots = (d * p) as usize;
        let mut spare_lost = 0;
        for &i in preempted {
            if i < slots {
                stage_loss[i % p as usize] += 1;
                hit[i / p as usize] = true;
            } else {
                spare_lost += 1;
            }
        }
        let mut stage_survivors: Vec<u32> = stage_loss.iter().map(|&l| d - l).collect();
        stage_survivors.sort_unstable();
        Self {
            stage_survivors,
            intact: hit.iter().filter(|&&h| !h).count() as u32,
            spare_survivors: spares - spare_lost,
        }
    }

    pub fn min_stage_survivors(&self) -> u32 {
        self.stage_survivors.first().copied().unwrap_or(0)
    }

    pub fn survivors(&self) -> u32 {
        self.stage_survivors.iter().sum::<u32>() + self.spare_survivors
    }
}

/// Weighted distinct scenario summaries for one `(D, P, spares, k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioTable {
    pub entries: Vec<(ScenarioSummary, u32)>,
    pub total: u32,
}

impl ScenarioTable {
    /// Builds the table for `k` preemptions over `topo`'s shape. Monte-Carlo
    /// seeds are derived from the shape so tables do not depend on the order
    /// in which they are requested.
    pub fn build(topo_cfg: Option<ParallelConfig>, n: u32, k: u32, mode: ScenarioMode) -> Result<Self> {
        check_counts(n, k)?;
        let (d, p) = topo_cfg.map_or((0, 0), |c| (c.d, c.p));
        if d * p > n {
            return Err(Error::InvalidArgument(format!(
                "{}x{} does not fit {n} instances",
                d, p
            )));
        }
        let spares = n - d * p;
        let mut stage_loss = vec![0u32; p as usize];
        let mut hit = vec![false; d as usize];
        let mut counts: BTreeMap<ScenarioSummary, u32> = BTreeMap::new();
        let mut add = |idx: &[usize]| {
            let s = ScenarioSummary::from_preempted(d, p, spares, idx, &mut stage_loss, &mut hit);
            *counts.entry(s).or_insert(0) += 1;
        };
        let exact = match mode {
            ScenarioMode::Exact => {
                let count = binomial(n, k);
                if count > ENUMERATION_CAP {
                    return Err(Error::EnumerationCap {
                        n,
                        k,
                        count,
                        cap: ENUMERATION_CAP,
                    });
                }
                true
            }
            ScenarioMode::Auto { .. } => binomial(n, k) <= AUTO_EXACT_LIMIT,
            ScenarioMode::MonteCarlo { .. } => false,
        };
        if exact {
            for idx in (0..n as usize).combinations(k as usize) {
                add(&idx);
            }
        } else {
            let (trials, seed) = match mode {
                ScenarioMode::MonteCarlo { trials, seed } | ScenarioMode::Auto { trials, seed } => (trials, seed),
                ScenarioMode::Exact => unreachable!(),
            };
            if trials == 0 {
                return Err(Error::InvalidArgument("trials must be >= 1".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, &[d, p, spares, k]));
            sample_subsets(n, k, trials, &mut rng, |idx| add(idx));
        }
        let total = counts.values().sum();
        Ok(Self {
            entries: counts.into_iter().collect(),
            total,
        })
    }

    /// Expected throughput after regrouping; agrees with [`expected_liveput`]
    /// for the same scenario set.
    pub fn liveput(&self, p: u32, d: u32, w: &WorkloadProfile) -> f64 {
        let mut sum = 0.0;
        for (s, c) in &self.entries {
            let alive = s.min_stage_survivors().min(d);
            if alive > 0 {
                sum += *c as f64 * throughput(ParallelConfig::new(alive, p), w);
            }
        }
        sum / self.total as f64
    }
}

/// SplitMix64-style seed derivation.
pub(crate) fn mix_seed(seed: u64, parts: &[u32]) -> u64 {
    let mut x = seed ^ 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        x = x.wrapping_add(p as u64).wrapping_add(0x9E37_79B9_7F4A_7C15);
        x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        x ^= x >> 31;
    }
    x
}
