use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use hybridimp_bench::{checkpoint, masked_synthetic};
use hybridimp_core::ImputeOptions;

fn sampling(c: &mut Criterion) {
    let table = masked_synthetic(500, 7);
    let ck = checkpoint(&table);
    let mut group = c.benchmark_group("impute");
    group.sample_size(10);
    for steps in [20, 100] {
        let options = ImputeOptions { steps, ..ImputeOptions::default() };
        group.bench_with_input(BenchmarkId::new("ddim_steps", steps), &options, |b, o| {
            b.iter(|| ck.impute(&table, o).expect("imputation succeeds"))
        });
    }
    group.finish();
}

fn training_epoch(c: &mut Criterion) {
    let table = masked_synthetic(500, 8);
    let mut group = c.benchmark_group("train");
    group.sample_size(10);
    group.bench_function("two_epochs_n500", |b| b.iter(|| checkpoint(&table)));
    group.finish();
}

criterion_group!(benches, sampling, training_epoch);
criterion_main!(benches);
