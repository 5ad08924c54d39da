use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use robw_bench::{budget_for, tall_skinny};
use robw_core::partition::{maxmemory_partition, robw_partition};
use robw_core::schedule::run;
use robw_core::{RunConfig, Strategy};
use std::hint::black_box;

fn partitioners(c: &mut Criterion) {
    let (a, _) = tall_skinny(4000, 0.005, 16);
    let sizes = RunConfig::default().sim.sizes();
    let m_a = a.byte_size(sizes) / 16;
    c.bench_function("robw_partition/4000", |bench| {
        bench.iter(|| robw_partition(black_box(&a), m_a, sizes).unwrap())
    });
    c.bench_function("maxmemory_partition/4000", |bench| {
        bench.iter(|| maxmemory_partition(black_box(&a), m_a, sizes).unwrap())
    });
}

/// Wall-clock cost of a full scheduled run, including the simulator.
fn strategies(c: &mut Criterion) {
    let (a, b) = tall_skinny(1500, 0.01, 32);
    let base = RunConfig::default();
    let mut group = c.benchmark_group("schedule");
    for fraction in [0.1, 0.5] {
        let cfg = base.with_device(budget_for(&a, &b, base.sim.sizes(), fraction));
        for s in Strategy::ALL {
            if run(s, &a, &b, &cfg).is_err() {
                continue;
            }
            group.bench_with_input(BenchmarkId::new(s.name(), fraction), &cfg, |bench, cfg| {
                bench.iter(|| run(s, black_box(&a), black_box(&b), cfg).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, partitioners, strategies);
criterion_main!(benches);
