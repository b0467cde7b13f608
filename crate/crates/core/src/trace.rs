//! Spot-instance availability traces.
//!
//! A raw [`EventTrace`] lists individual preemption and allocation events. The
//! planner works on an [`IntervalSeries`]: the number of available instances
//! at each fixed-length interval, with every event folded to the start of the
//! interval it falls into.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_INTERVAL_SECONDS: f64 = 60.0;

/// Share of the capacity above which a segment counts as high availability.
pub const HIGH_AVAILABILITY_SHARE: f64 = 0.70;

/// Available-instance counts per interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalSeries {
    pub interval_seconds: f64,
    pub counts: Vec<u32>,
    pub capacity: u32,
}

impl IntervalSeries {
    pub fn new(counts: Vec<u32>, capacity: u32, interval_seconds: f64) -> Result<Self> {
        if !(interval_seconds > 0.0) || !interval_seconds.is_finite() {
            return Err(Error::InvalidSeries(format!(
                "interval_seconds must be positive, got {interval_seconds}"
            )));
        }
        if capacity == 0 {
            return Err(Error::InvalidSeries("capacity must be positive".into()));
        }
        if let Some((i, &n)) = counts.iter().enumerate().find(|(_, &n)| n > capacity) {
            return Err(Error::InvalidSeries(format!(
                "count {n} at interval {i} exceeds capacity {capacity}"
            )));
        }
        Ok(Self {
            interval_seconds,
            counts,
            capacity,
        })
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Total allocated instance-seconds over the whole series.
    pub fn instance_seconds(&self) -> f64 {
        self.counts.iter().map(|&n| n as f64).sum::<f64>() * self.interval_seconds
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Preempt,
    Allocate,
}

impl std::fmt::Display for EventKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EventKind::Preempt => "preempt",
            EventKind::Allocate => "allocate",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub timestamp_s: f64,
    pub kind: EventKind,
    pub instance_id: String,
}

/// Ordered preemption / allocation events.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EventTrace {
    pub events: Vec<TraceEvent>,
}

impl EventTrace {
    pub fn new(events: Vec<TraceEvent>) -> Result<Self> {
        let trace = Self { events };
        trace.validate()?;
        Ok(trace)
    }

    /// Checks ordering and instance liveness.
    pub fn validate(&self) -> Result<()> {
        let mut alive = HashSet::new();
        let mut last = f64::NEG_INFINITY;
        for (i, ev) in self.events.iter().enumerate() {
            if !ev.timestamp_s.is_finite() || ev.timestamp_s < 0.0 {
                return Err(Error::MalformedTrace(format!(
                    "event {i}: invalid timestamp {}",
                    ev.timestamp_s
                )));
            }
            if ev.timestamp_s < last {
                return Err(Error::MalformedTrace(format!(
                    "event {i}: timestamp {} precedes {last}",
                    ev.timestamp_s
                )));
            }
            last = ev.timestamp_s;
            match ev.kind {
                EventKind::Allocate => {
                    if !alive.insert(ev.instance_id.as_str()) {
                        return Err(Error::MalformedTrace(format!(
                            "event {i}: instance {} allocated while present",
                            ev.instance_id
                        )));
                    }
                }
                EventKind::Preempt => {
                    if !alive.remove(ev.instance_id.as_str()) {
                        return Err(Error::MalformedTrace(format!(
                            "event {i}: unknown or absent instance {}",
                            ev.instance_id
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Builds an event trace that reproduces `series` when discretized with the
    /// same interval length. Events sit exactly on interval starts; preempted
    /// instances are the most recently allocated ones.
    pub fn from_series(series: &IntervalSeries) -> Self {
        let mut events = Vec::new();
        let mut alive: Vec<u64> = Vec::new();
        let mut next_id = 0u64;
        for (i, &n) in series.counts.iter().enumerate() {
            let t = i as f64 * series.interval_seconds;
            while (alive.len() as u32) > n {
                let id = alive.pop().expect("non-empty");
                events.push(TraceEvent {
                    timestamp_s: t,
                    kind: EventKind::Preempt,
                    instance_id: format!("i{id}"),
                });
            }
            while (alive.len() as u32) < n {
                alive.push(next_id);
                events.push(TraceEvent {
                    timestamp_s: t,
                    kind: EventKind::Allocate,
                    instance_id: format!("i{next_id}"),
                });
                next_id += 1;
            }
        }
        Self { events }
    }
}

/// Discretizes an event trace. `N_i` is the number of live instances once all
/// events with timestamps in `[i*T, (i+1)*T)` have been applied.
pub fn to_interval_series(trace: &EventTrace, interval_seconds: f64, capacity: u32) -> Result<IntervalSeries> {
    if !(interval_seconds > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "interval_seconds must be positive, got {interval_seconds}"
        )));
    }
    trace.validate()?;
    let Some(last) = trace.events.last() else {
        return IntervalSeries::new(Vec::new(), capacity, interval_seconds);
    };
    let num_intervals = (last.timestamp_s / interval_seconds).floor() as usize + 1;
    let mut counts = Vec::with_capacity(num_intervals);
    let mut live: i64 = 0;
    let mut cursor = 0;
    for i in 0..num_intervals {
        let end = (i + 1) as f64 * interval_seconds;
        while cursor < trace.events.len() && trace.events[cursor].timestamp_s < end {
            match trace.events[cursor].kind {
                EventKind::Allocate => live += 1,
                EventKind::Preempt => live -= 1,
            }
            cursor += 1;
        }
        counts.push(live as u32);
    }
    IntervalSeries::new(counts, capacity, interval_seconds)
}

/// Newly allocated and preempted instances at the start of an interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Delta {
    pub plus: u32,
    pub minus: u32,
}

/// `N+_i = max(0, N_i - N_{i-1})`, `N-_i = max(0, N_{i-1} - N_i)`; the first
/// interval is all allocation.
pub fn derive_deltas(series: &IntervalSeries) -> Vec<Delta> {
    deltas_of(&series.counts)
}

pub(crate) fn deltas_of(counts: &[u32]) -> Vec<Delta> {
    let mut out = Vec::with_capacity(counts.len());
    let mut prev = None;
    for &n in counts {
        out.push(match prev {
            None => Delta { plus: n, minus: 0 },
            Some(p) => Delta {
                plus: n.saturating_sub(p),
                minus: p.saturating_sub(n),
            },
        });
        prev = Some(n);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AvailabilityClass {
    High,
    Low,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMetrics {
    pub availability_class: AvailabilityClass,
    pub preemption_events: usize,
    pub allocation_events: usize,
    pub avg_instances: f64,
}

/// Availability and preemption intensity of a segment. Events are intervals
/// (after the first) with a non-zero decrease or increase.
pub fn segment_metrics(series: &IntervalSeries) -> TraceMetrics {
    let deltas = derive_deltas(series);
    let preemption_events = deltas.iter().skip(1).filter(|d| d.minus > 0).count();
    let allocation_events = deltas.iter().skip(1).filter(|d| d.plus > 0).count();
    let avg_instances = if series.is_empty() {
        0.0
    } else {
        series.counts.iter().map(|&n| n as f64).sum::<f64>() / series.len() as f64
    };
    let availability_class = if avg_instances / series.capacity as f64 > HIGH_AVAILABILITY_SHARE {
        AvailabilityClass::High
    } else {
        AvailabilityClass::Low
    };
    TraceMetrics {
        availability_class,
        preemption_events,
        allocation_events,
        avg_instances,
    }
}

/// Request for a synthetic series with an exact number of events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub capacity: u32,
    pub length: usize,
    pub start: u32,
    pub preemption_events: usize,
    pub allocation_events: usize,
    /// Inclusive range of instances gained or lost per event.
    pub magnitude: (u32, u32),
    pub interval_seconds: f64,
}

impl SyntheticSpec {
    pub fn new(seed: u64, capacity: u32, length: usize) -> Self {
        Self {
            seed,
            capacity,
            length,
            start: capacity,
            preemption_events: 0,
            allocation_events: 0,
            magnitude: (1, 4),
            interval_seconds: DEFAULT_INTERVAL_SECONDS,
        }
    }
}

const SYNTHETIC_ATTEMPTS: usize = 512;

/// Generates a series whose deltas contain exactly the requested number of
/// preemption and allocation events. Deterministic under `spec.seed`.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<IntervalSeries> {
    let (lo, hi) = spec.magnitude;
    let infeasible = |msg: String| Err(Error::InfeasibleGeneration(msg));
    if spec.length == 0 {
        return infeasible("length must be positive".into());
    }
    if spec.capacity == 0 || spec.start > spec.capacity {
        return infeasible(format!(
            "start {} must lie in [0, capacity {}]",
            spec.start, spec.capacity
        ));
    }
    if lo == 0 || hi < lo || hi > spec.capacity {
        return infeasible(format!(
            "magnitude range {lo}..={hi} must satisfy 1 <= lo <= hi <= capacity"
        ));
    }
    let events = spec.preemption_events + spec.allocation_events;
    if events > spec.length - 1 {
        return infeasible(format!(
            "{events} events do not fit into {} interval boundaries",
            spec.length - 1
        ));
    }

    let (p, a) = (spec.preemption_events as u64, spec.allocation_events as u64);
    let (lo64, hi64) = (lo as u64, hi as u64);
    if lo64 * a > (spec.capacity - spec.start) as u64 + hi64 * p || lo64 * p > spec.start as u64 + hi64 * a {
        return infeasible(format!(
            "{p} preemptions and {a} allocations cannot stay within [0, {}] from {}",
            spec.capacity, spec.start
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    for _ in 0..SYNTHETIC_ATTEMPTS {
        let mut slots = rand::seq::index::sample(&mut rng, spec.length - 1, events).into_vec();
        slots.sort_unstable();
        let mut counts = Vec::with_capacity(spec.length);
        let mut current = spec.start;
        counts.push(current);
        let mut next_slot = slots.iter().peekable();
        let mut preempts_left = spec.preemption_events as u32;
        let mut allocs_left = spec.allocation_events as u32;
        let mut ok = true;
        for i in 1..spec.length {
            if next_slot.peek().is_some_and(|&&slot| slot + 1 == i) {
                next_slot.next();
                // room left after reserving for later events of the same kind
                // that the other kind cannot offset
                let preempt_room =
                    current.saturating_sub(lo * preempts_left.saturating_sub(1).saturating_sub(allocs_left));
                let alloc_room = (spec.capacity - current)
                    .saturating_sub(lo * allocs_left.saturating_sub(1).saturating_sub(preempts_left));
                let can_preempt = preempts_left > 0 && preempt_room >= lo;
                let can_alloc = allocs_left > 0 && alloc_room >= lo;
                let kind = match (can_preempt, can_alloc) {
                    (false, false) => {
                        ok = false;
                        break;
                    }
                    (true, false) => EventKind::Preempt,
                    (false, true) => EventKind::Allocate,
                    (true, true) => {
                        if rng.gen_range(0..preempts_left + allocs_left) < preempts_left {
                            EventKind::Preempt
                        } else {
                            EventKind::Allocate
                        }
                    }
                };
                let room = match kind {
                    EventKind::Preempt => {
                        preempts_left -= 1;
                        preempt_room
                    }
                    EventKind::Allocate => {
                        allocs_left -= 1;
                        alloc_room
                    }
                };
                let top = hi.min(room);
                let m = rng.gen_range(lo..=top);
                current = match kind {
                    EventKind::Preempt => current - m,
                    EventKind::Allocate => current + m,
                };
            }
            counts.push(current);
        }
        if ok {
            return IntervalSeries::new(counts, spec.capacity, spec.interval_seconds);
        }
    }
    infeasible(format!("no event placement found after {SYNTHETIC_ATTEMPTS} attempts"))
}

/// Folds single-GPU events into multi-GPU instances of `gpus_per_instance`
/// GPUs each. An instance is allocated at the first allocation of its group
/// and preempted at the last preemption of its group. Counts are clamped to
/// the multi-GPU cluster size `ceil(capacity / g)`.
pub fn gen_multigpu(series: &IntervalSeries, gpus_per_instance: u32) -> Result<IntervalSeries> {
    if gpus_per_instance == 0 {
        return Err(Error::InvalidArgument("gpus_per_instance must be >= 1".into()));
    }
    let g = gpus_per_instance as u64;
    let capacity = series.capacity.div_ceil(gpus_per_instance);
    let mut allocated = 0u64;
    let mut preempted = 0u64;
    let counts = derive_deltas(series)
        .into_iter()
        .map(|d| {
            allocated += d.plus as u64;
            preempted += d.minus as u64;
            let n = allocated.div_ceil(g) - preempted / g;
            (n as u32).min(capacity)
        })
        .collect();
    IntervalSeries::new(counts, capacity, series.interval_seconds)
}

/// Bursty availability: availability drifts between random levels over
/// several intervals (gradual preemption waves and recoveries) with
/// occasional one-interval dips.
pub fn gen_bursty(seed: u64, capacity: u32, length: usize) -> IntervalSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cap = capacity as f64;
    let mut level = rng.gen_range(0.5 * cap..=cap);
    let mut counts = Vec::with_capacity(length);
    while counts.len() < length {
        if rng.gen_bool(0.25) {
            let hold = rng.gen_range(2..=6);
            for _ in 0..hold {
                counts.push(level.round() as u32);
            }
        } else {
            let target = rng.gen_range(0.25 * cap..=cap);
            let rate = rng.gen_range(0.6..=2.0);
            let span = ((target - level).abs() / rate).ceil().max(1.0) as usize;
            let step = (target - level) / span as f64;
            for _ in 0..span {
                level += step;
                counts.push(level.round().clamp(0.0, cap) as u32);
            }
        }
    }
    counts.truncate(length);
    for i in 1..length.saturating_sub(1) {
        if counts[i - 1] == counts[i] && rng.gen_bool(0.04) {
            let dip = rng.gen_range(2..=5).min(counts[i]);
            counts[i] -= dip;
        }
    }
    IntervalSeries {
        interval_seconds: DEFAULT_INTERVAL_SECONDS,
        counts,
        capacity,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ev(t: f64, kind: EventKind, id: &str) -> TraceEvent {
        TraceEvent {
            timestamp_s: t,
            kind,
            instance_id: id.to_string(),
        }
    }

    fn series(counts: &[u32], cap: u32) -> IntervalSeries {
        IntervalSeries::new(counts.to_vec(), cap, 60.0).unwrap()
    }

    #[test]
    fn empty_trace_gives_empty_series() {
        let s = to_interval_series(&EventTrace::default(), 60.0, 32).unwrap();
        assert!(s.counts.is_empty());
    }

    #[test]
    fn events_fold_to_interval_start() {
        let mut events: Vec<_> = (0..4).map(|i| ev(0.0, EventKind::Allocate, &format!("a{i}"))).collect();
        events.push(ev(65.0, EventKind::Preempt, "a2"));
        let trace = EventTrace::new(events).unwrap();
        let s = to_interval_series(&trace, 60.0, 32).unwrap();
        assert_eq!(s.counts, vec![4, 3]);
    }

    #[test]
    fn unknown_instance_is_malformed() {
        let trace = EventTrace {
            events: vec![ev(0.0, EventKind::Allocate, "a"), ev(10.0, EventKind::Preempt, "b")],
        };
        assert!(matches!(
            to_interval_series(&trace, 60.0, 8),
            Err(Error::MalformedTrace(_))
        ));
        let dup = EventTrace {
            events: vec![ev(0.0, EventKind::Allocate, "a"), ev(1.0, EventKind::Allocate, "a")],
        };
        assert!(dup.validate().is_err());
        let unordered = EventTrace {
            events: vec![ev(5.0, EventKind::Allocate, "a"), ev(1.0, EventKind::Allocate, "b")],
        };
        assert!(unordered.validate().is_err());
    }

    #[test]
    fn over_capacity_is_rejected() {
        let events = (0..5).map(|i| ev(0.0, EventKind::Allocate, &format!("a{i}"))).collect();
        let trace = EventTrace::new(events).unwrap();
        assert!(to_interval_series(&trace, 60.0, 4).is_err());
    }

    #[test]
    fn deltas_examples() {
        let d = derive_deltas(&series(&[4, 6, 5], 8));
        assert_eq!(
            d,
            vec![
                Delta { plus: 4, minus: 0 },
                Delta { plus: 2, minus: 0 },
                Delta { plus: 0, minus: 1 }
            ]
        );
        let d = derive_deltas(&series(&[8, 8, 8], 8));
        assert!(d[1..].iter().all(|d| d.plus == 0 && d.minus == 0));
        let d = derive_deltas(&series(&[10, 0, 10], 10));
        assert_eq!(
            d,
            vec![
                Delta { plus: 10, minus: 0 },
                Delta { plus: 0, minus: 10 },
                Delta { plus: 10, minus: 0 }
            ]
        );
    }

    #[test]
    fn metrics_examples() {
        let m = segment_metrics(&series(&[16; 60], 32));
        assert_eq!(m.avg_instances, 16.0);
        assert_eq!(m.availability_class, AvailabilityClass::Low);
        assert_eq!((m.preemption_events, m.allocation_events), (0, 0));

        let m = segment_metrics(&series(&[32, 24, 32], 32));
        assert_eq!((m.preemption_events, m.allocation_events), (1, 1));
        assert!((m.avg_instances - 29.333).abs() < 1e-3);
        assert_eq!(m.availability_class, AvailabilityClass::High);
    }

    #[test]
    fn synthetic_without_events_is_constant() {
        let s = gen_synthetic(&SyntheticSpec::new(1, 32, 60)).unwrap();
        assert_eq!(s.counts, vec![32; 60]);
    }

    #[test]
    fn synthetic_hits_requested_event_count() {
        let spec = SyntheticSpec {
            preemption_events: 30,
            allocation_events: 29,
            ..SyntheticSpec::new(7, 32, 60)
        };
        let s = gen_synthetic(&spec).unwrap();
        let m = segment_metrics(&s);
        assert_eq!(m.preemption_events, 30);
        assert_eq!(m.allocation_events, 29);
        assert_eq!(s, gen_synthetic(&spec).unwrap());
    }

    #[test]
    fn synthetic_rejects_impossible_requests() {
        let too_many = SyntheticSpec {
            preemption_events: 40,
            allocation_events: 40,
            ..SyntheticSpec::new(1, 32, 60)
        };
        assert!(gen_synthetic(&too_many).is_err());
        let drained = SyntheticSpec {
            start: 2,
            preemption_events: 5,
            magnitude: (1, 1),
            ..SyntheticSpec::new(1, 32, 60)
        };
        assert!(matches!(gen_synthetic(&drained), Err(Error::InfeasibleGeneration(_))));
    }

    #[test]
    fn multigpu_examples() {
        let s = series(&[3, 7, 5, 5, 8, 2], 8);
        assert_eq!(gen_multigpu(&s, 1).unwrap(), s);

        let s = series(&[0, 8], 32);
        assert_eq!(gen_multigpu(&s, 4).unwrap().counts, vec![0, 2]);

        // first allocation of a group allocates the instance, the last
        // preemption of a group releases it
        let s = series(&[1, 4, 5, 2, 1], 8);
        assert_eq!(gen_multigpu(&s, 4).unwrap().counts, vec![1, 1, 2, 2, 1]);
    }

    #[test]
    fn from_series_round_trips() {
        let s = series(&[3, 7, 5, 5, 0, 2], 8);
        let trace = EventTrace::from_series(&s);
        trace.validate().unwrap();
        assert_eq!(to_interval_series(&trace, 60.0, 8).unwrap(), s);
    }

    proptest! {
        #[test]
        fn deltas_reconstruct_series(counts in proptest::collection::vec(0u32..=32, 1..80)) {
            let s = series(&counts, 32);
            let d = derive_deltas(&s);
            let mut n = 0i64;
            for (i, delta) in d.iter().enumerate() {
                prop_assert!(delta.plus == 0 || delta.minus == 0);
                n += delta.plus as i64 - delta.minus as i64;
                prop_assert_eq!(n, counts[i] as i64);
            }
        }

        #[test]
        fn synthetic_is_fixed_point_of_metrics(
            seed in 0u64..1000,
            p in 0usize..20,
            a in 0usize..20,
        ) {
            let spec = SyntheticSpec {
                start: 24,
                preemption_events: p,
                allocation_events: a,
                ..SyntheticSpec::new(seed, 32, 60)
            };
            // net drift must fit between the start and the bounds
            prop_assume!(a <= p + 8 && p <= a + 24);
            let s = gen_synthetic(&spec).unwrap();
            let m = segment_metrics(&s);
            prop_assert_eq!(m.preemption_events, p);
            prop_assert_eq!(m.allocation_events, a);
        }

        #[test]
        fn multigpu_never_loses_gpu_hours(counts in proptest::collection::vec(0u32..=32, 1..80), g in 1u32..=8) {
            let s = series(&counts, 32);
            let m = gen_multigpu(&s, g).unwrap();
            for (orig, folded) in s.counts.iter().zip(&m.counts) {
                prop_assert!(folded * g >= *orig);
            }
        }
    }
}
