use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use kmotion_bench::{phantom, trajectory};
use kmotion_core::metrics::{niqe_features, NiqeConfig};
use kmotion_core::motion::corrupt;
use kmotion_core::nn::{backward, build_network, forward, infer, Mode, NetworkConfig, Tensor4};
use kmotion_core::volume::fft3_centered;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn fft(c: &mut Criterion) {
    let mut g = c.benchmark_group("fft3");
    for n in [16, 32, 64] {
        let v = phantom([n, n, n.min(16)], 1);
        g.bench_with_input(BenchmarkId::from_parameter(n), &v, |b, v| b.iter(|| fft3_centered(black_box(v)).unwrap()));
    }
    g.finish();
}

fn corruption(c: &mut Criterion) {
    let v = phantom([64, 64, 16], 2);
    let t = trajectory(64, 3);
    c.bench_function("corrupt_64x64x16", |b| b.iter(|| corrupt(black_box(&v), &t).unwrap()));
}

fn network(c: &mut Criterion) {
    let p = build_network(&NetworkConfig::default(), 4).unwrap();
    let x = Tensor4::new([4, 1, 64, 64], (0..4 * 64 * 64).map(|i| ((i * 37) % 101) as f64 / 101.0).collect()).unwrap();
    let one = Tensor4::new([1, 1, 64, 64], x.sample(0).to_vec()).unwrap();
    c.bench_function("unet_infer_64", |b| b.iter(|| infer(&p, black_box(&one)).unwrap()));
    c.bench_function("unet_train_step_batch4", |b| {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        b.iter(|| {
            let f = forward(&p, black_box(&x), Mode::Train, &mut rng, &[]).unwrap();
            backward(&p, &f.cache, &x).unwrap()
        })
    });
}

fn quality(c: &mut Criterion) {
    let v = phantom([64, 64, 16], 6);
    let img = v.extract_slice(2, 8).unwrap();
    let img = img.with_data(img.data().iter().map(|x| x * 255.0).collect()).unwrap();
    let cfg = NiqeConfig::default();
    c.bench_function("niqe_features_64", |b| b.iter(|| niqe_features(black_box(&img), None, &cfg).unwrap()));
}

criterion_group!(benches, fft, corruption, network, quality);
criterion_main!(benches);
