use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;

use fairscore_bench::benchmark_world;
use fairscore_core::{
    aggregate, allocate, census_prior, score_from_matrix, suppress, unstratified_scores,
    AllocationMode, JoinMode, WeightingConfig,
};

fn bench_pipeline(c: &mut Criterion) {
    let world = benchmark_world(5000);
    let weighting = WeightingConfig::default();
    let matrix = aggregate(&world.records, &world.schema, &weighting).unwrap();
    let prior = census_prior(
        &world.schema,
        &world.population,
        &JoinMode::JointIfAvailable,
    )
    .unwrap();
    let scores = score_from_matrix(&matrix, &prior, None).unwrap();

    c.bench_function("aggregate_5k_contributors", |b| {
        b.iter(|| aggregate(black_box(&world.records), &world.schema, &weighting).unwrap())
    });

    c.bench_function("score_from_matrix", |b| {
        b.iter(|| score_from_matrix(black_box(&matrix), &prior, None).unwrap())
    });

    c.bench_function("unstratified_scores", |b| {
        b.iter(|| unstratified_scores(black_box(&matrix)).unwrap())
    });

    c.bench_function("allocate_100k_budget", |b| {
        b.iter(|| allocate(black_box(&scores), 100_000, 7, AllocationMode::Multinomial).unwrap())
    });

    c.bench_function("suppress_k10", |b| {
        b.iter_batched(
            || matrix.clone(),
            |m| suppress(black_box(&m), 10).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, bench_pipeline);
criterion_main!(benches);
