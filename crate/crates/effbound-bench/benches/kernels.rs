use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use effbound_core::bounds::FunctionalKind;
use effbound_core::models::{char_function, JumpMeasure, LevyTriplet};
use effbound_core::operators::{inv_adjoint, ScoreOperator};
use effbound_core::spectral_core::convolve;
use effbound_core::{GridFunction, UniformGrid};

fn gamma_triplet(n: usize) -> LevyTriplet {
    let g = UniformGrid::symmetric(16.0, n).unwrap();
    LevyTriplet::new(0.0, 1.0, JumpMeasure::gamma(g, 0.3, 1.0).unwrap()).unwrap()
}

fn bench_convolve(c: &mut Criterion) {
    let mut group = c.benchmark_group("convolve");
    for n in [1 << 12, 1 << 14, 1 << 16] {
        let g = UniformGrid::symmetric(16.0, n).unwrap();
        let f = GridFunction::from_fn(g, |x| (-x * x).exp());
        let h = GridFunction::from_fn(g, |x| (-(x - 1.0).abs()).exp());
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| convolve(&f, &h).unwrap())
        });
    }
    group.finish();
}

fn bench_char_function(c: &mut Criterion) {
    let mut group = c.benchmark_group("char_function_gamma");
    for n in [1 << 12, 1 << 14] {
        let t = gamma_triplet(n);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| char_function(&t).unwrap())
        });
    }
    group.finish();
}

fn bench_inv_adjoint(c: &mut Criterion) {
    let t = gamma_triplet(1 << 14);
    let a = ScoreOperator::levy(&t).unwrap();
    let z = FunctionalKind::IndicatorRight { t: 1.0 };
    c.bench_function("inv_adjoint_gamma_16384", |b| {
        b.iter(|| inv_adjoint(&a, &z).unwrap())
    });
}

criterion_group! {
    name = kernels;
    config = Criterion::default().sample_size(20);
    targets = bench_convolve, bench_char_function, bench_inv_adjoint
}
criterion_main!(kernels);
