use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dwrl_bench::model_and_pair;
use dwrl_core::estimators::{dwrl_gradient_estimate, exact_gradient};
use dwrl_core::{DualWeights, SeedStream, ThoughtGroup};
use std::hint::black_box;

fn exact(c: &mut Criterion) {
    let mut group = c.benchmark_group("exact_gradient");
    for (v, t) in [(3, 2), (4, 3), (8, 4)] {
        let (model, pair) = model_and_pair(v, t);
        let cap = v.pow(t as u32);
        group.bench_with_input(BenchmarkId::from_parameter(format!("V{v}_T{t}")), &cap, |b, &cap| {
            b.iter(|| exact_gradient(black_box(&model), black_box(&pair), cap).unwrap())
        });
    }
    group.finish();
}

fn sampled(c: &mut Criterion) {
    let (model, pair) = model_and_pair(8, 4);
    let stream = SeedStream::new(2);
    c.bench_function("sample_thoughts_n4_V8_T4", |b| {
        b.iter(|| model.sample_thoughts(black_box(&pair.ctx_plus), 4, &stream).unwrap())
    });

    let weights = DualWeights::new(
        ThoughtGroup::score(&model, &pair.ctx_plus, model.sample_thoughts(&pair.ctx_plus, 4, &stream.child(0)).unwrap()).unwrap(),
        ThoughtGroup::score(&model, &pair.ctx_minus, model.sample_thoughts(&pair.ctx_minus, 4, &stream.child(1)).unwrap()).unwrap(),
    )
    .unwrap();
    c.bench_function("dwrl_gradient_estimate_n4_V8_T4", |b| {
        b.iter(|| dwrl_gradient_estimate(black_box(&model), black_box(&pair), black_box(&weights)))
    });
}

criterion_group!(benches, exact, sampled);
criterion_main!(benches);
