//! Shared fixtures for the benchmarks.

use liveput::optimizer::reactive_plan;
use liveput::profiles::gpt2_like;
use liveput::trace::{gen_bursty, gen_synthetic, SyntheticSpec};
use liveput::{IntervalSeries, LiveputOptimizer, OptimizerConfig, ParallelConfig, WorkloadProfile};

pub fn workload() -> WorkloadProfile {
    gpt2_like()
}

/// One hour at 30 preemption and 30 allocation events.
pub fn dense_trace(seed: u64) -> IntervalSeries {
    gen_synthetic(&SyntheticSpec {
        preemption_events: 30,
        allocation_events: 30,
        ..SyntheticSpec::new(seed, 32, 61)
    })
    .expect("dense trace")
}

pub fn bursty_trace(seed: u64) -> IntervalSeries {
    gen_bursty(seed, 32, 240)
}

/// Planning windows of `lookahead + 1` counts cut from a bursty trace.
pub fn windows(lookahead: usize, count: usize) -> Vec<Vec<u32>> {
    let s = bursty_trace(10);
    (0..count)
        .map(|i| {
            let at = (i * 7) % (s.len() - lookahead - 1);
            s.counts[at..=at + lookahead].to_vec()
        })
        .collect()
}

pub fn start(n_seq: &[u32], w: &WorkloadProfile) -> Option<ParallelConfig> {
    reactive_plan(n_seq[0], w)
}

/// An optimizer whose scenario tables already cover `windows`.
pub fn warm_optimizer(windows: &[Vec<u32>]) -> LiveputOptimizer {
    let w = workload();
    let mut opt = LiveputOptimizer::new(w.clone(), OptimizerConfig::default()).expect("optimizer");
    for n_seq in windows {
        opt.dp_optimize(start(n_seq, &w), n_seq).expect("plan");
    }
    opt
}
