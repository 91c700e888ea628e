use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use efy_bench::instances;
use efy_core::conjugate::conjugate_iterative;
use efy_core::instances::EnergyFamily;
use efy_core::losses::gfy_loss;
use efy_core::{conjugate, Regularizer, SolverConfig, Vector};

fn solvers(c: &mut Criterion) {
    let cfg = SolverConfig::default();
    let mut group = c.benchmark_group("conjugate");
    for k in [3, 10] {
        let gini = Regularizer::gini_binary(1.0, k).unwrap();
        let bilinear = instances(EnergyFamily::Bilinear, k, 32);
        group.bench_with_input(BenchmarkId::new("closed_form_bilinear", k), &bilinear, |b, set| {
            b.iter(|| set.iter().map(|(e, v)| conjugate(e, &gini, v, &cfg).unwrap().value).sum::<f64>())
        });
        let pairwise = instances(EnergyFamily::Pairwise, k, 32);
        group.bench_with_input(BenchmarkId::new("coordinate_ascent_pairwise", k), &pairwise, |b, set| {
            b.iter(|| set.iter().map(|(e, v)| conjugate(e, &gini, v, &cfg).unwrap().value).sum::<f64>())
        });
        group.bench_with_input(BenchmarkId::new("projected_gradient_pairwise", k), &pairwise, |b, set| {
            b.iter(|| set.iter().map(|(e, v)| conjugate_iterative(e, &gini, v, &cfg).unwrap().value).sum::<f64>())
        });
        let spen = instances(EnergyFamily::Spen, k, 32);
        let shannon = Regularizer::shannon_binary(1.0, k).unwrap();
        group.bench_with_input(BenchmarkId::new("projected_gradient_spen", k), &spen, |b, set| {
            b.iter(|| set.iter().map(|(e, v)| conjugate(e, &shannon, v, &cfg).unwrap().value).sum::<f64>())
        });
    }
    group.finish();
}

fn loss(c: &mut Criterion) {
    let cfg = SolverConfig::loose();
    let k = 5;
    let gini = Regularizer::gini_binary(1.0, k).unwrap();
    let set = instances(EnergyFamily::Pairwise, k, 32);
    let y = Vector::from_fn(k, |j, _| (j % 2) as f64);
    c.bench_function("gfy_loss_pairwise_k5", |b| {
        b.iter(|| set.iter().map(|(e, v)| gfy_loss(e, &gini, v, black_box(&y), &cfg).unwrap().value).sum::<f64>())
    });
}

criterion_group!(benches, solvers, loss);
criterion_main!(benches);
