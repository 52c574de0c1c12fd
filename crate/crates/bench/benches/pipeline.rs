use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use pdscreen_core::direction::{fit_direction, FitConfig, FitMode};
use pdscreen_core::fusion::{hybrid_fuse, HybridFusionParams};
use pdscreen_core::gait::{gait_forward, preprocess, GaitModel, GaitModelConfig};
use pdscreen_core::latent::{invert, ConvPyramidExtractor};
use pdscreen_core::synthetic::{
    sample_latent_clusters, simulate_gait, GaitSimSpec, ToyGenerator, ToyGeneratorSpec,
};
use pdscreen_core::{
    Diagnosis, FeatureVector, Generator, ImageShape, InversionConfig, LatentVector, Modality,
};

fn gait(c: &mut Criterion) {
    let cfg = GaitModelConfig::default();
    let model = GaitModel::new(cfg.clone(), 1).unwrap();
    let seq = simulate_gait("bench", &GaitSimSpec::for_class(Diagnosis::Pd, 2)).unwrap();
    let windows = preprocess(&seq, &cfg.window).unwrap();
    c.bench_function("preprocess", |b| {
        b.iter(|| preprocess(black_box(&seq), &cfg.window).unwrap())
    });
    c.bench_function("gait_forward", |b| {
        b.iter(|| gait_forward(black_box(&windows), model.graph(), &model).unwrap())
    });
}

fn fusion(c: &mut Criterion) {
    let p = HybridFusionParams::new(16, 16, 3);
    let g = FeatureVector::new(Modality::Gait, (0..16).map(|i| i as f64 / 16.0).collect()).unwrap();
    let f = FeatureVector::new(
        Modality::Face,
        (0..16).map(|i| 1.0 - i as f64 / 16.0).collect(),
    )
    .unwrap();
    c.bench_function("hybrid_fuse", |b| {
        b.iter(|| hybrid_fuse(black_box(&g), black_box(&f), &p).unwrap())
    });
}

fn latent(c: &mut Criterion) {
    let spec = ToyGeneratorSpec {
        latent_dim: 16,
        shape: ImageShape::new(16, 16, 1),
        seed: 4,
    };
    let generator = ToyGenerator::new(&spec).unwrap();
    let truth = LatentVector::new((0..16).map(|i| (i as f64 * 0.7).sin()).collect()).unwrap();
    let target = generator.forward(&truth).unwrap();
    let extractor = ConvPyramidExtractor::standard(spec.shape, 5);
    let cfg = InversionConfig {
        max_iterations: 100,
        ..InversionConfig::default()
    };
    let mut group = c.benchmark_group("latent");
    group.sample_size(10);
    group.bench_function("invert_100_steps", |b| {
        b.iter(|| invert(black_box(&target), &generator, &extractor, &cfg).unwrap())
    });
    let mut mu_b = vec![0.0; 64];
    mu_b[0] = 2.0;
    let (data, _) = sample_latent_clusters(&[0.0; 64], &mu_b, 0.3, 200, 6).unwrap();
    group.bench_function("fit_direction_standard", |b| {
        b.iter(|| {
            fit_direction(black_box(&data), FitMode::Standard, &FitConfig::default()).unwrap()
        })
    });
    group.finish();
}

criterion_group!(benches, gait, fusion, latent);
criterion_main!(benches);
