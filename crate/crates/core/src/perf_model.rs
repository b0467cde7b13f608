//! Analytic throughput model for hybrid data- and pipeline-parallel training.
//!
//! A configuration `(D, P)` runs `D` replicas of a `P`-stage pipeline. Each
//! pipeline processes `M` micro-batches per mini-batch with a fill-drain
//! schedule, then every stage group synchronizes gradients with a ring
//! all-reduce costed by the alpha-beta model.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `D` data-parallel pipelines of `P` stages each.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParallelConfig {
    pub d: u32,
    pub p: u32,
}

impl ParallelConfig {
    pub const fn new(d: u32, p: u32) -> Self {
        Self { d, p }
    }

    /// Number of instances the configuration occupies.
    pub const fn instances(&self) -> u32 {
        self.d * self.p
    }
}

impl fmt::Display for ParallelConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.d, self.p)
    }
}

impl FromStr for ParallelConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (d, p) = s
            .split_once(['x', 'X', ','])
            .ok_or_else(|| Error::InvalidArgument(format!("expected DxP, got {s:?}")))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<u32>()
                .ok()
                .filter(|&n| n >= 1)
                .ok_or_else(|| Error::InvalidArgument(format!("bad config component {v:?} in {s:?}")))
        };
        Ok(Self::new(parse(d)?, parse(p)?))
    }
}

/// Per-stage memory footprint `fixed_bytes + per_stage_bytes / P`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemoryModel {
    pub fixed_bytes: f64,
    pub per_stage_bytes: f64,
}

impl MemoryModel {
    pub fn bytes_at_depth(&self, p: u32) -> f64 {
        self.fixed_bytes + self.per_stage_bytes / p as f64
    }
}

/// Profiled cost parameters of one model on one instance type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadProfile {
    #[serde(default)]
    pub name: String,
    /// Forward+backward seconds for one micro-batch through the whole model.
    pub total_compute_per_microbatch: f64,
    pub param_bytes_total: f64,
    pub activation_bytes_per_boundary: f64,
    pub minibatch_size: u32,
    pub microbatch_size: u32,
    pub device_memory: f64,
    pub memory_per_stage: MemoryModel,
    /// Per-message latency, seconds.
    pub alpha: f64,
    /// Inverse bandwidth, seconds per byte.
    pub beta: f64,
    /// Price per instance-hour.
    pub spot_price: f64,
    pub ondemand_price: f64,
    /// Optional measured single-pipeline throughput (samples/s) keyed by
    /// depth. When present it replaces the analytic pipeline time and depths
    /// absent from the table are treated as infeasible.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pipeline_rate: Option<BTreeMap<u32, f64>>,
    /// Samples per epoch for the sample manager.
    #[serde(default = "default_epoch_size")]
    pub epoch_size: u64,
    /// Tokens per sample, used only for reporting.
    #[serde(default = "default_tokens_per_sample")]
    pub tokens_per_sample: u32,
}

fn default_epoch_size() -> u64 {
    1_000_000
}

fn default_tokens_per_sample() -> u32 {
    1
}

impl WorkloadProfile {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: &str| Err(Error::InvalidProfile(format!("{field}: {why}")));
        let non_negative = [
            ("total_compute_per_microbatch", self.total_compute_per_microbatch),
            ("param_bytes_total", self.param_bytes_total),
            ("activation_bytes_per_boundary", self.activation_bytes_per_boundary),
            ("device_memory", self.device_memory),
            ("memory_per_stage.fixed_bytes", self.memory_per_stage.fixed_bytes),
            (
                "memory_per_stage.per_stage_bytes",
                self.memory_per_stage.per_stage_bytes,
            ),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("spot_price", self.spot_price),
            ("ondemand_price", self.ondemand_price),
        ];
        for (field, v) in non_negative {
            if !v.is_finite() || v < 0.0 {
                return bad(field, "must be finite and non-negative");
            }
        }
        if self.microbatch_size == 0 || self.minibatch_size == 0 {
            return bad("minibatch_size", "batch sizes must be positive");
        }
        if !self.minibatch_size.is_multiple_of(self.microbatch_size) {
            return bad("microbatch_size", "must divide minibatch_size");
        }
        if self.epoch_size == 0 {
            return bad("epoch_size", "must be positive");
        }
        if let Some(rates) = &self.pipeline_rate {
            for (&p, &r) in rates {
                if p == 0 || !r.is_finite() || r <= 0.0 {
                    return bad("pipeline_rate", "depths must be >= 1 and rates positive");
                }
            }
        } else if self.total_compute_per_microbatch <= 0.0 {
            return bad("total_compute_per_microbatch", "must be positive");
        }
        Ok(())
    }

    /// Micro-batches per pipeline per iteration: `ceil(B / (D * b))`, at least 1.
    pub fn microbatches_per_pipeline(&self, d: u32) -> u32 {
        let per_pipeline = d as u64 * self.microbatch_size as u64;
        (self.minibatch_size as u64).div_ceil(per_pipeline).max(1) as u32
    }

    /// Samples committed per iteration. Equals the mini-batch unless `D`
    /// exceeds the number of micro-batches, in which case every pipeline still
    /// runs one micro-batch and the effective mini-batch grows.
    pub fn samples_per_iteration(&self, d: u32) -> f64 {
        (self.minibatch_size as f64).max(d as f64 * self.microbatch_size as f64)
    }

    /// Seconds of one fill-drain pipeline pass, including activation transfers.
    pub fn pipeline_time(&self, cfg: ParallelConfig) -> f64 {
        let m = self.microbatches_per_pipeline(cfg.d) as f64;
        let p = cfg.p as f64;
        let stage = self.total_compute_per_microbatch / p;
        let boundary = self.alpha + self.activation_bytes_per_boundary * self.beta;
        (m + p - 1.0) * stage + 2.0 * (p - 1.0) * boundary
    }

    /// Ring all-reduce of one stage's gradients across the `D` replicas.
    pub fn sync_time(&self, cfg: ParallelConfig) -> f64 {
        if cfg.d <= 1 {
            return 0.0;
        }
        let d = cfg.d as f64;
        let shard = self.param_bytes_total / cfg.p as f64;
        2.0 * (d - 1.0) / d * shard * self.beta + 2.0 * (d - 1.0) * self.alpha
    }

    /// Depths whose per-stage footprint fits on one device, ascending, up to `max_p`.
    pub fn feasible_depths(&self, max_p: u32) -> Vec<u32> {
        (1..=max_p)
            .filter(|&p| feasible(ParallelConfig::new(1, p), self))
            .collect()
    }

    pub fn min_feasible_depth(&self, max_p: u32) -> Option<u32> {
        (1..=max_p).find(|&p| feasible(ParallelConfig::new(1, p), self))
    }
}

/// Whether a `P`-stage partition fits in device memory.
pub fn feasible(cfg: ParallelConfig, w: &WorkloadProfile) -> bool {
    if cfg.d == 0 || cfg.p == 0 {
        return false;
    }
    if let Some(rates) = &w.pipeline_rate {
        if !rates.contains_key(&cfg.p) {
            return false;
        }
    }
    w.memory_per_stage.bytes_at_depth(cfg.p) <= w.device_memory
}

/// Samples per second of `cfg`; zero when infeasible.
pub fn throughput(cfg: ParallelConfig, w: &WorkloadProfile) -> f64 {
    if !feasible(cfg, w) {
        return 0.0;
    }
    let samples = w.samples_per_iteration(cfg.d);
    let sync = w.sync_time(cfg);
    match w.pipeline_rate.as_ref().and_then(|r| r.get(&cfg.p)) {
        // pipelines run at the measured rate; sync time stretches the iteration
        Some(&rate) => {
            let ideal = cfg.d as f64 * rate;
            ideal / (1.0 + sync * ideal / samples)
        }
        None => samples / (w.pipeline_time(cfg) + sync),
    }
}

/// All `(D, P)` with `D * P <= n` and a feasible depth, ordered by ascending
/// `P` then descending `D`.
pub fn enumerate_configs(n: u32, w: &WorkloadProfile) -> Vec<ParallelConfig> {
    let mut out = Vec::new();
    for p in 1..=n {
        if !feasible(ParallelConfig::new(1, p), w) {
            continue;
        }
        out.extend((1..=n / p).rev().map(|d| ParallelConfig::new(d, p)));
    }
    out
}
