use criterion::{black_box, criterion_group, criterion_main, Criterion};
use estent_bench::{cat_counting, standard_map, triangle};
use estent_core::ballvolume::ball_decay;
use estent_core::coder::{run_estimation, CoderConfig};
use estent_core::entropy::{max_separated, min_spanning, AlphaBowenContext};
use estent_core::lyapunov::lyapunov_qr;
use estent_core::partitions::standard_subdivide;
use estent_core::SystemDefinition;

fn lyapunov(c: &mut Criterion) {
    let sys = standard_map();
    c.bench_function("lyapunov_qr standard map n=1e4", |b| {
        b.iter(|| lyapunov_qr(&sys, black_box(&[0.3, 0.4]), 10_000, 1).unwrap())
    });
}

fn counting(c: &mut Criterion) {
    let (sys, grid) = cat_counting(128).unwrap();
    let ctx = AlphaBowenContext::new(&sys, 0.0, 0.1, 4.0).unwrap();
    let mut g = c.benchmark_group("cat map 128x128 T=4");
    g.sample_size(10);
    g.bench_function("separated", |b| b.iter(|| max_separated(&ctx, &grid).unwrap().count));
    g.bench_function("spanning", |b| b.iter(|| min_spanning(&ctx, &grid).unwrap().count));
    g.finish();
}

fn splitting(c: &mut Criterion) {
    let sys = standard_map();
    let mut g = c.benchmark_group("ball decay");
    g.sample_size(10);
    g.bench_function("standard map n=8, 1000 particles", |b| {
        b.iter(|| ball_decay(&sys, &[0.3, 0.4], 0.1, 0.5, 8, 1000, 1).unwrap())
    });
    g.finish();
}

fn subdivision(c: &mut Criterion) {
    let tri = triangle().unwrap();
    c.bench_function("standard_subdivide to 4096 cells", |b| {
        b.iter(|| {
            let mut k = tri.clone();
            for _ in 0..6 {
                k = standard_subdivide(&k).unwrap();
            }
            k.len()
        })
    });
}

fn coder(c: &mut Criterion) {
    let sys = SystemDefinition::cat_map();
    let cfg = CoderConfig::new(0.5, 0.1, 100);
    c.bench_function("coder cat map horizon 100", |b| {
        b.iter(|| run_estimation(&sys, black_box(&[0.3141, 0.5926]), &cfg, 1).unwrap())
    });
}

criterion_group!(benches, lyapunov, counting, splitting, subdivision, coder);
criterion_main!(benches);
