use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use efy_bench::planted;
use efy_core::training::train;
use efy_core::{Architecture, LossKind, ModelSpec, Regularizer, Task, TrainConfig};

fn epoch(c: &mut Criterion) {
    let data = planted(500);
    let cfg = TrainConfig { epochs: 1, ..TrainConfig::default() };
    let mut group = c.benchmark_group("train_one_epoch");
    group.sample_size(10);
    for arch in [Architecture::Unary, Architecture::Pairwise, Architecture::Spen] {
        let task = Task {
            spec: ModelSpec::new(arch, data.n_features(), data.n_labels()),
            reg: Regularizer::gini_binary(1.0, data.n_labels()).unwrap(),
            loss: LossKind::Gfy,
        };
        group.bench_function(BenchmarkId::from_parameter(arch.name()), |b| {
            b.iter(|| train(&data, None, &task, &cfg).unwrap().final_loss())
        });
    }
    group.finish();
}

criterion_group!(benches, epoch);
criterion_main!(benches);
