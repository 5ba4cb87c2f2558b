use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use reach_core::eval::DEFAULT_FUEL;
use reach_core::harness::{generate_corpus, run_corpus, Exec, GenConfig};
use reach_core::monitor::MonitorOptions;
use reach_core::CheckMode;

const SIZES: [usize; 2] = [256, 1024];

fn batch(c: &mut Criterion) {
    let mut group = c.benchmark_group("corpus");
    group.sample_size(10);
    for mode in [CheckMode::Base, CheckMode::Full] {
        let cfg = GenConfig::new(7, 8, mode);
        for n in SIZES {
            let corpus = generate_corpus(&cfg, n, Exec::Parallel);
            for (label, exec) in [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)] {
                group.bench_with_input(BenchmarkId::new(format!("generate/{mode}/{label}"), n), &n, |b, &n| {
                    b.iter(|| generate_corpus(black_box(&cfg), n, exec))
                });
                group.bench_with_input(BenchmarkId::new(format!("check+monitor/{mode}/{label}"), n), &corpus, |b, corpus| {
                    b.iter(|| run_corpus(black_box(corpus), mode, DEFAULT_FUEL, MonitorOptions::all(), exec))
                });
            }
        }
    }
    group.finish();
}

criterion_group!(benches, batch);
criterion_main!(benches);
