use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use latsplat::ablation::random_frustum_scene;
use latsplat::camera::{CameraIntrinsics, CameraPose};
use latsplat::raster::{prune_by_opacity, render, render_with_gradients, RenderAdjoint};

fn bench_render(c: &mut Criterion) {
    let k = CameraIntrinsics::from_fov(128, 128, 70.0).unwrap();
    let pose = CameraPose::identity();
    let mut group = c.benchmark_group("render");
    group.sample_size(10);
    for n in [10_000, 100_000] {
        let scene = random_frustum_scene(n, 1);
        group.bench_with_input(BenchmarkId::new("full", n), &scene, |b, s| b.iter(|| render(black_box(s), &pose, &k)));
        let pruned = prune_by_opacity(&scene, 0.2).unwrap();
        group.bench_with_input(BenchmarkId::new("pruned", n), &pruned, |b, s| b.iter(|| render(black_box(s), &pose, &k)));
    }
    let scene = random_frustum_scene(10_000, 2);
    let mut adj = RenderAdjoint::zeros(128, 128);
    adj.image.data.iter_mut().for_each(|v| *v = 1e-3);
    group.bench_function("gradients/10000", |b| b.iter(|| render_with_gradients(black_box(&scene), &pose, &k, &adj)));
    group.finish();
}

criterion_group!(benches, bench_render);
criterion_main!(benches);
