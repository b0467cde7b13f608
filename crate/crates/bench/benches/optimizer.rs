use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use liveput::preemption::{ScenarioMode, ScenarioTable};
use liveput::simulator::run;
use liveput::{LiveputOptimizer, OptimizerConfig, ParallelConfig, Policy, SimOptions};
use liveput_bench::{dense_trace, start, warm_optimizer, windows, workload};

fn dp_optimize(c: &mut Criterion) {
    let w = workload();
    let mut group = c.benchmark_group("dp_optimize");
    for lookahead in [4usize, 12] {
        let ws = windows(lookahead, 16);
        let mut opt = warm_optimizer(&ws);
        let mut i = 0;
        group.bench_function(format!("cached/I={lookahead}"), |b| {
            b.iter(|| {
                let n_seq = &ws[i % ws.len()];
                i += 1;
                black_box(opt.dp_optimize(start(n_seq, &w), n_seq).unwrap())
            })
        });
    }
    let n_seq = vec![32u32; 13];
    group.sample_size(10);
    group.bench_function("cold/I=12", |b| {
        b.iter_batched(
            || LiveputOptimizer::new(w.clone(), OptimizerConfig::default()).unwrap(),
            |mut opt| black_box(opt.dp_optimize(start(&n_seq, &w), &n_seq).unwrap()),
            BatchSize::PerIteration,
        )
    });
    group.finish();
}

fn scenario_table(c: &mut Criterion) {
    let cfg = Some(ParallelConfig::new(4, 8));
    let mut group = c.benchmark_group("scenario_table");
    for k in [2u32, 4] {
        group.bench_function(format!("exact/32 choose {k}"), |b| {
            b.iter(|| ScenarioTable::build(black_box(cfg), 32, k, ScenarioMode::Exact).unwrap())
        });
    }
    group.bench_function("monte_carlo/32 choose 8", |b| {
        b.iter(|| {
            ScenarioTable::build(
                black_box(cfg),
                32,
                8,
                ScenarioMode::MonteCarlo { trials: 1000, seed: 1 },
            )
            .unwrap()
        })
    });
    group.finish();
}

fn simulate(c: &mut Criterion) {
    let w = workload();
    let series = dense_trace(1);
    let opts = SimOptions::default();
    let mut group = c.benchmark_group("simulate");
    group.sample_size(10);
    for (name, policy) in [("reactive", Policy::Reactive), ("proactive", Policy::proactive(12))] {
        group.bench_function(name, |b| {
            b.iter(|| black_box(run(&series, &w, &policy, 1, &opts).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, dp_optimize, scenario_table, simulate);
criterion_main!(benches);
