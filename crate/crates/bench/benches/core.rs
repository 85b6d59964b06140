use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

use loid::{auc, nuts_sample, LogDensity, LogisticPosterior, PriorDist, SamplerConfig};

fn design(n: usize, d: usize, seed: u64) -> (DMatrix<f64>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = DMatrix::from_fn(n, d, |_, _| rng.random_range(-2.0..2.0));
    let labels = (0..n)
        .map(|i| {
            let eta: f64 = x.row(i).iter().take(3).sum();
            u8::from(rng.random::<f64>() < 1.0 / (1.0 + (-eta).exp()))
        })
        .collect();
    (x, labels)
}

fn logp_grad(c: &mut Criterion) {
    let mut g = c.benchmark_group("logp_grad");
    for &(n, d) in &[(300, 10), (2000, 30)] {
        let (x, y) = design(n, d, 1);
        let priors = vec![PriorDist::normal(0.0, 1.0); d];
        let post = LogisticPosterior::new(&x, &y, &priors, PriorDist::normal(0.0, 1.0)).unwrap();
        let theta = vec![0.1; d + 1];
        let mut grad = vec![0.0; d + 1];
        g.bench_with_input(
            BenchmarkId::from_parameter(format!("{n}x{d}")),
            &(),
            |b, _| b.iter(|| black_box(post.logp_grad(black_box(&theta), &mut grad))),
        );
    }
    g.finish();
}

fn nuts(c: &mut Criterion) {
    let (x, y) = design(300, 8, 2);
    let priors = vec![PriorDist::normal(0.0, 1.0); 8];
    let post = LogisticPosterior::new(&x, &y, &priors, PriorDist::normal(0.0, 1.0)).unwrap();
    let cfg = SamplerConfig {
        chains: 1,
        warmup: 200,
        draws: 200,
        ..SamplerConfig::default()
    };
    let mut g = c.benchmark_group("nuts");
    g.sample_size(10);
    g.bench_function("300x8_1chain_200_200", |b| {
        b.iter(|| nuts_sample(&post, black_box(&cfg)).unwrap())
    });
    g.finish();
}

fn auc_bench(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 100_000;
    let scores: Vec<f64> = (0..n).map(|_| rng.random()).collect();
    let labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
    c.bench_function("auc_100k", |b| {
        b.iter(|| auc(black_box(&scores), &labels).unwrap())
    });
}

criterion_group!(benches, logp_grad, nuts, auc_bench);
criterion_main!(benches);
