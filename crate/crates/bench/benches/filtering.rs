use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dcrf_core::depthprep::normalize_depth_to_rgb;
use dcrf_core::inference::{build_lattice, gaussian_filter_bruteforce, FeatureMatrix};
use dcrf_core::potentials::pixel_features;
use dcrf_core::synth::{blocks, Scene};
use dcrf_core::{run_inference, Backend, CrfParams, InferenceConfig, NormalizedDepth};

fn scene(side: usize, k: usize) -> (Scene, NormalizedDepth) {
    let scene = blocks(side, side, k, 1).render(1).unwrap();
    let depth = normalize_depth_to_rgb(&scene.depth, &scene.rgb).unwrap();
    (scene, depth)
}

/// Joint appearance features of a blocks scene under the default bandwidths.
fn joint_features(side: usize) -> FeatureMatrix {
    let (scene, depth) = scene(side, 8);
    let params = CrfParams::default();
    let features = pixel_features(&scene.rgb, &depth).unwrap();
    FeatureMatrix::joint(&features, &params)
}

fn filtering(c: &mut Criterion) {
    let mut group = c.benchmark_group("filter");
    group.sample_size(10);
    for side in [32usize, 64] {
        let f = joint_features(side);
        let values = vec![1.0; f.n() * 4];
        group.bench_with_input(BenchmarkId::new("brute", side), &f, |b, f| {
            b.iter(|| gaussian_filter_bruteforce(f, &values, 4).unwrap())
        });
        let lattice = build_lattice(&f).unwrap();
        group.bench_with_input(BenchmarkId::new("lattice", side), &lattice, |b, l| {
            b.iter(|| l.filter(&values, 4).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("lattice_build", side), &f, |b, f| {
            b.iter(|| build_lattice(f).unwrap())
        });
    }
    group.finish();
}

fn refinement(c: &mut Criterion) {
    let mut group = c.benchmark_group("refine");
    group.sample_size(10);
    for side in [64usize, 128] {
        let (scene, depth) = scene(side, 8);
        let params = CrfParams::default();
        let config = InferenceConfig::new(Backend::Lattice, 10);
        group.bench_function(BenchmarkId::new("lattice_10_iterations", side), |b| {
            b.iter(|| run_inference(&scene.unary, &scene.rgb, &depth, &params, &config).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, filtering, refinement);
criterion_main!(benches);
