use criterion::{black_box, criterion_group, criterion_main, Criterion};

use latsplat::raster::CHANNELS;
use latsplat_bench::desk_fixture;

fn bench_decoder(c: &mut Criterion) {
    let (decoder, input) = desk_fixture(0);
    let mut group = c.benchmark_group("decoder");
    group.sample_size(10);
    group.bench_function("decode_static/4_views", |b| b.iter(|| decoder.decode_static(black_box(&input))));
    let one = input.subset(&[0]);
    group.bench_function("decode_static/1_view", |b| b.iter(|| decoder.decode_static(black_box(&one))));
    group.bench_function("forward_backward/4_views", |b| {
        b.iter(|| {
            let (scene, cache) = decoder.forward_train(&input, false).unwrap();
            let dg = vec![[1e-3; CHANNELS]; scene.len()];
            decoder.backward(&cache, &dg).unwrap()
        })
    });
    group.finish();
}

criterion_group!(benches, bench_decoder);
criterion_main!(benches);
