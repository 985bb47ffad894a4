use std::time::Duration;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use viewlet::harness::{
    find_query, run_bench, BenchConfig, BenchMode, OrderBookConfig, Parallelism, TpchConfig,
};

fn config(parallelism: Parallelism) -> BenchConfig {
    BenchConfig {
        queries: ["Q3", "Q18", "VWAP", "AXF"]
            .iter()
            .map(|q| find_query(q).unwrap())
            .collect(),
        modes: vec![BenchMode::Depth1, BenchMode::Optimized],
        orderbook: OrderBookConfig::small(),
        orderbook_events: 1500,
        tpch: TpchConfig::small(1500),
        timeout: Duration::from_secs(30),
        series_every: 500,
        parallelism,
        ..Default::default()
    }
}

fn sequential_vs_parallel(c: &mut Criterion) {
    let mut group = c.benchmark_group("run_bench");
    group.sample_size(10);
    for (name, p) in [
        ("sequential", Parallelism::Sequential),
        ("parallel", Parallelism::Parallel),
    ] {
        let cfg = config(p);
        group.bench_with_input(BenchmarkId::from_parameter(name), &cfg, |b, cfg| {
            b.iter(|| run_bench(cfg))
        });
    }
    group.finish();
}

criterion_group!(benches, sequential_vs_parallel);
criterion_main!(benches);
