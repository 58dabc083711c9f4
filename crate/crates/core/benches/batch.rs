use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mmpih::batch::{run_batch, Execution};
use mmpih::config::Config;
use mmpih::sim::TraceMode;

fn batches(c: &mut Criterion) {
    let mut group = c.benchmark_group("batch");
    group.sample_size(10);
    for episodes in [4usize, 16] {
        let mut cfg = Config::default();
        cfg.run.episodes = episodes;
        cfg.run.max_macro_steps = 8;
        for (name, exec) in [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)] {
            group.bench_with_input(BenchmarkId::new(name, episodes), &cfg, |b, cfg| {
                b.iter(|| run_batch(cfg, TraceMode::Off, exec).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, batches);
criterion_main!(benches);
