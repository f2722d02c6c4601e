use criterion::{criterion_group, criterion_main, Criterion};

use capfusion::nn::{BatchNorm1d, Conv1d, Dense, Lstm, Mode};
use capfusion_bench::{rng, uniform};

// batch 64, 20 channels, one-second windows at 25 Hz
const B: usize = 64;

fn conv(c: &mut Criterion) {
    let mut layer = Conv1d::new(20, 64, 5, 1).unwrap();
    layer.init(&mut rng(1));
    let x = uniform(&[B, 20, 25], 2);
    let g = uniform(&[B, 64, 21], 3);
    c.bench_function("conv1d 20->64 k5 forward", |b| b.iter(|| layer.forward(&x).unwrap()));
    c.bench_function("conv1d 20->64 k5 forward+backward", |b| {
        b.iter(|| {
            layer.forward(&x).unwrap();
            layer.backward(&g).unwrap()
        })
    });
}

fn batch_norm(c: &mut Criterion) {
    let mut layer = BatchNorm1d::new(64, 1e-5, 0.1).unwrap();
    let x = uniform(&[B, 64, 21], 4);
    let g = uniform(&[B, 64, 21], 5);
    c.bench_function("batchnorm 64ch train forward+backward", |b| {
        b.iter(|| {
            layer.forward(&x, Mode::Train).unwrap();
            layer.backward(&g).unwrap()
        })
    });
}

fn dense(c: &mut Criterion) {
    let mut layer = Dense::new(128, 128).unwrap();
    layer.init(&mut rng(6));
    let x = uniform(&[B, 128], 7);
    let g = uniform(&[B, 128], 8);
    c.bench_function("dense 128->128 forward+backward", |b| {
        b.iter(|| {
            layer.forward(&x).unwrap();
            layer.backward(&g).unwrap()
        })
    });
}

fn lstm(c: &mut Criterion) {
    let mut layer = Lstm::new(64, 128).unwrap();
    layer.init(&mut rng(9));
    let x = uniform(&[B, 17, 64], 10);
    let g = uniform(&[B, 17, 128], 11);
    c.bench_function("lstm 64->128 T17 forward", |b| b.iter(|| layer.forward(&x).unwrap()));
    c.bench_function("lstm 64->128 T17 forward+backward", |b| {
        b.iter(|| {
            layer.forward(&x).unwrap();
            layer.backward(&g).unwrap()
        })
    });
}

criterion_group!(benches, conv, batch_norm, dense, lstm);
criterion_main!(benches);
