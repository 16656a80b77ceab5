//! Kernel throughput, sequential vs parallel.
//!
//! The same workload runs once with one worker and once with every available
//! core; outputs are bit-identical either way, so the comparison isolates the
//! scheduling cost. Build with `--no-default-features` to measure the
//! rayon-free fallback.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use expnet_core::{ops, par, Tape, Tensor};

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

fn conv_forward_backward(input: &Tensor, weight: &Tensor, bias: &Tensor) -> f64 {
    let mut tape = Tape::new();
    let x = tape.leaf(input);
    let w = tape.leaf(weight);
    let b = tape.leaf(bias);
    let y = ops::conv2d(&mut tape, &x, &w, &b, 1, 1).unwrap();
    let loss = ops::sum(&mut tape, &y).unwrap();
    tape.backward(&loss).unwrap();
    tape.grad(&w).unwrap()[0]
}

fn bench_conv(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let input = rand_tensor(&mut rng, &[32, 32, 16]);
    let weight = rand_tensor(&mut rng, &[3, 3, 16, 16]);
    let bias = rand_tensor(&mut rng, &[16]);
    c.bench_function("conv2d_32x32x16_fwd_bwd", |b| {
        b.iter(|| conv_forward_backward(&input, &weight, &bias))
    });
}

fn bench_batch_modes(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let weight = rand_tensor(&mut rng, &[3, 3, 8, 8]);
    let bias = rand_tensor(&mut rng, &[8]);
    let batch: Vec<Tensor> = (0..8).map(|_| rand_tensor(&mut rng, &[24, 24, 8])).collect();

    let workers = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(2);
    let mut group = c.benchmark_group("batch_conv_grad");
    for threads in [1, workers] {
        group.bench_with_input(BenchmarkId::from_parameter(threads), &threads, |b, &t| {
            par::set_threads(t);
            b.iter(|| {
                par::map_indexed(&batch, |_, img| conv_forward_backward(img, &weight, &bias))
            });
        });
    }
    group.finish();
    par::set_threads(1);
}

criterion_group!(benches, bench_conv, bench_batch_modes);
criterion_main!(benches);
