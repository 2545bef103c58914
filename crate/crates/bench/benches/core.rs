use std::collections::BTreeMap;
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use gnome_bench::{label_pairs, mapped_corpus, model_and_batch, rating_matrix};
use gnome_core::baseline::loss_and_gradient;
use gnome_core::evalharness::weighted_f1;
use gnome_core::humaneval::{krippendorff_alpha, AlphaMetric};
use gnome_core::seedselect::{select_seed, FrequencyScope};
use gnome_core::DatasetId;

fn metrics(c: &mut Criterion) {
    let mut g = c.benchmark_group("weighted_f1");
    for n in [1_000, 10_000] {
        let (gold, pred) = label_pairs(n, 1);
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| b.iter(|| weighted_f1(black_box(&gold), black_box(&pred))));
    }
    g.finish();
}

fn alpha(c: &mut Criterion) {
    let mut g = c.benchmark_group("krippendorff_alpha");
    for items in [100, 1_000] {
        let m = rating_matrix(4, items, 2);
        g.bench_with_input(BenchmarkId::from_parameter(items), &items, |b, _| {
            b.iter(|| krippendorff_alpha(black_box(&m), AlphaMetric::Interval))
        });
    }
    g.finish();
}

fn seed(c: &mut Criterion) {
    let corpora: BTreeMap<_, _> = [(DatasetId::CaSiNo, mapped_corpus(2_000, 3))].into();
    c.bench_function("select_seed/2000", |b| b.iter(|| select_seed(black_box(&corpora), 250, FrequencyScope::PerSource)));
}

fn gradient(c: &mut Criterion) {
    let (m, batch) = model_and_batch(4_000, 512, 4);
    c.bench_function("loss_and_gradient/512x4000", |b| b.iter(|| loss_and_gradient(black_box(&m), black_box(&batch))));
}

criterion_group!(benches, metrics, alpha, seed, gradient);
criterion_main!(benches);
