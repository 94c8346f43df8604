use std::hint::black_box;

use camforge_bench::{gaussian, uniform_mat};
use camforge_core::forge::{random_scene_2d, render_motion_blur, SceneParams2D};
use camforge_core::net::{block_forward, Checkpoint, InferenceMode, ModelConfig};
use camforge_core::probe::frechet_distance;
use camforge_core::spectra::svd;
use camforge_core::ControlScalar;
use criterion::{criterion_group, criterion_main, Criterion};

fn bench_svd(c: &mut Criterion) {
    let w = uniform_mat(1, 64, 64);
    c.bench_function("svd_64x64", |b| b.iter(|| svd(black_box(&w)).unwrap()));
}

fn bench_frechet(c: &mut Criterion) {
    let (g1, g2) = (gaussian(2, 64), gaussian(3, 64));
    c.bench_function("frechet_d64", |b| {
        b.iter(|| frechet_distance(black_box(&g1), black_box(&g2)).unwrap())
    });
}

fn bench_motion_blur(c: &mut Criterion) {
    let scene = random_scene_2d(4, &SceneParams2D::default().scaled_to((128, 128))).unwrap();
    c.bench_function("motion_blur_128px_32sub", |b| {
        b.iter(|| render_motion_blur(black_box(&scene), 0.5, 0.1, 32).unwrap())
    });
}

fn bench_block_forward(c: &mut Criterion) {
    let cfg = ModelConfig::default();
    let ck = Checkpoint::init(cfg.clone(), 5).unwrap();
    let block = cfg.adapter_blocks[0];
    let params = ck.block_params(block, InferenceMode::Joint);
    let x = uniform_mat(6, 64, cfg.model_dim);
    let text = uniform_mat(7, 8, cfg.text_dim);
    let cond = ControlScalar::new(0.3).unwrap();
    c.bench_function("block_forward_64_tokens", |b| {
        b.iter(|| block_forward(black_box(&params), black_box(&x), &text, cond, cfg.gate).unwrap())
    });
}

criterion_group!(benches, bench_svd, bench_frechet, bench_motion_blur, bench_block_forward);
criterion_main!(benches);
