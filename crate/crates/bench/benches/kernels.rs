use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use ganlab::nn::{minibatch_features, KernelShape};
use ganlab::trainer::{ExperimentConfig, GanTrainer};
use ganlab::{Tape, Tensor};

fn filled(rows: usize, cols: usize, salt: f64) -> Tensor {
    let data = (0..rows * cols).map(|i| ((i as f64 + salt) * 0.618).sin()).collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

fn matmul(c: &mut Criterion) {
    let a = filled(64, 128, 0.0);
    let b = filled(128, 128, 1.0);
    c.bench_function("matmul 64x128x128", |bench| {
        bench.iter(|| {
            let tape = Tape::new();
            black_box(tape.matmul(black_box(&a), black_box(&b)).unwrap())
        })
    });
}

fn minibatch(c: &mut Criterion) {
    let f = filled(64, 64, 0.0);
    let t = filled(64, 15, 2.0);
    let shape = KernelShape {
        input: 64,
        kernels: 5,
        kernel_dim: 3,
    };
    c.bench_function("minibatch features n=64 B=5 C=3 (fwd+bwd)", |bench| {
        bench.iter(|| {
            let tape = Tape::new();
            let f = tape.leaf(&f);
            let o = minibatch_features(&tape, &f, &t, shape, true).unwrap();
            black_box(tape.backward(&tape.reduce_sum(&o)).unwrap())
        })
    });
}

fn gan_step(c: &mut Criterion) {
    let cfg = ExperimentConfig::parse("g.hidden = 64,64\nd.hidden = 64,64\nminibatch = true\n").unwrap();
    let mut trainer = GanTrainer::new(&cfg).unwrap();
    c.bench_function("ring GAN step (64-wide, minibatch)", |bench| {
        bench.iter(|| black_box(trainer.step().unwrap()))
    });
}

criterion_group!(benches, matmul, minibatch, gan_step);
criterion_main!(benches);
