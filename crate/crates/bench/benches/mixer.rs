use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::Rng as _;

use latsplat::decoder::{Attention, Mixer, ParamSet};
use latsplat::rng::rng_for;

fn bench_mixers(c: &mut Criterion) {
    let dim = 64;
    let mut rng = rng_for(0, "bench-mixer");
    let mut p = ParamSet::default();
    let attn = Attention::new(&mut p, "attn", dim, 4, &mut rng, 0.02);
    let mixer = Mixer::new(&mut p, "mixer", dim, 2 * dim, 16, &mut rng, 0.02);
    let x: Vec<f64> = (0..4096 * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut group = c.benchmark_group("token_mixing");
    group.sample_size(10);
    for n in [512, 1024, 2048, 4096] {
        let xs = &x[..n * dim];
        group.bench_with_input(BenchmarkId::new("recurrence", n), &n, |b, &n| b.iter(|| mixer.forward(&p, black_box(xs), n)));
        group.bench_with_input(BenchmarkId::new("attention", n), &n, |b, &n| b.iter(|| attn.forward(&p, black_box(xs), n)));
    }
    group.finish();
}

criterion_group!(benches, bench_mixers);
criterion_main!(benches);
