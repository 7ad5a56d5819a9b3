use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use erf_bench::{erf_config, example1, gpd_sample, test_points};
use erf_core::gpd::{grimshaw_fit, penalized_fit, PenaltyConfig, ThetaBox};
use erf_core::{erf_fit, fit_forest, similarity_weights, ForestParams};

fn forest(c: &mut Criterion) {
    let mut g = c.benchmark_group("fit_forest");
    g.sample_size(10);
    for n in [1000, 4000] {
        let data = example1(n, 10, 1);
        let params = ForestParams::default().with_trees(100);
        g.bench_with_input(BenchmarkId::from_parameter(n), &data, |b, d| b.iter(|| fit_forest(d, &params).unwrap()));
    }
    g.finish();

    let data = example1(2000, 10, 2);
    let f = fit_forest(&data, &ForestParams::default().with_trees(500)).unwrap();
    let x = test_points(1, 10, 3).remove(0);
    c.bench_function("similarity_weights/n2000_b500", |b| b.iter(|| similarity_weights(&f, black_box(&x)).unwrap()));
}

fn gpd(c: &mut Criterion) {
    let tb = ThetaBox::default();
    for k in [200, 2000] {
        let s = gpd_sample(k, 0.25, 4);
        c.bench_function(&format!("grimshaw_fit/k{k}"), |b| b.iter(|| grimshaw_fit(black_box(&s), &tb).unwrap()));
        let pen = PenaltyConfig::new(0.01, 0.2, 10.0).unwrap();
        c.bench_function(&format!("penalized_fit/k{k}"), |b| b.iter(|| penalized_fit(black_box(&s), &pen, &tb).unwrap()));
    }
}

fn predict(c: &mut Criterion) {
    let data = example1(2000, 10, 5);
    let model = erf_fit(&data, &erf_config(500)).unwrap();
    let xs = test_points(16, 10, 6);
    let mut g = c.benchmark_group("predict");
    g.sample_size(20);
    g.bench_function("erf_16_points", |b| {
        b.iter(|| xs.iter().map(|x| model.predict_extreme_quantile(x, 0.9995).unwrap().q_extreme).sum::<f64>())
    });
    g.finish();
}

criterion_group!(benches, forest, gpd, predict);
criterion_main!(benches);
