use artishape_bench::{figures, signatures};
use artishape_core::features::{build_feature_matrix, DEFAULT_PCG_TOL};
use artishape_core::geometry::{measure, DEFAULT_SAMPLE_CAP};
use artishape_core::matching::build_dissimilarity_matrix;
use artishape_core::rpca::{default_lambda, rpca_ialm, RpcaOptions};
use artishape_core::FeatureSpace;
use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

fn features(c: &mut Criterion) {
    let mask = &figures()[1];
    let (_, ms) = measure(mask, DEFAULT_SAMPLE_CAP);
    let mut group = c.benchmark_group("features");
    group.sample_size(10);
    group.bench_function("measure", |b| b.iter(|| measure(black_box(mask), DEFAULT_SAMPLE_CAP)));
    for space in [FeatureSpace::thickness(3), FeatureSpace::extent(2, 3)] {
        group.bench_function(format!("matrix_{space}"), |b| {
            b.iter(|| build_feature_matrix(black_box(mask), space, &ms, DEFAULT_PCG_TOL).unwrap())
        });
    }
    group.finish();
}

fn rpca(c: &mut Criterion) {
    let mask = &figures()[1];
    let (_, ms) = measure(mask, DEFAULT_SAMPLE_CAP);
    let fm = build_feature_matrix(mask, FeatureSpace::thickness(3), &ms, DEFAULT_PCG_TOL).unwrap();
    let lambda = default_lambda(fm.data.nrows());
    let opts = RpcaOptions::default();
    let mut group = c.benchmark_group("rpca");
    group.sample_size(10);
    group.bench_function(format!("ialm_m{}", fm.data.nrows()), |b| {
        b.iter(|| rpca_ialm(black_box(&fm.data), lambda, &opts).unwrap())
    });
    group.finish();
}

fn dissimilarity(c: &mut Criterion) {
    let sigs = signatures(3);
    c.bench_function(&format!("distmat_n{}", sigs.len()), |b| {
        b.iter(|| build_dissimilarity_matrix(black_box(&sigs)).unwrap())
    });
}

criterion_group!(benches, features, rpca, dissimilarity);
criterion_main!(benches);
