//! Kernel and forward-pass benchmarks: convolution variants, activations,
//! the pyramid bridge, and the desk-scale model step.

use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use udet_bench::random_tensor;
use udet_core::loss::weighted_bce_value;
use udet_core::model::{UdetModel, VariantSpec, WidthScale};
use udet_core::ops::{Conv2DSpec, Mode};
use udet_core::train::init_weights;
use udet_core::{ParamRegistry, Shape4, Tape, Tensor4};

fn bench_conv2d(c: &mut Criterion) {
    let x = random_tensor(Shape4::new(1, 32, 64, 64), 1);
    let w = random_tensor(Shape4::new(32, 32, 3, 3), 2);
    let b = random_tensor(Shape4::new(1, 32, 1, 1), 3);
    let spec = Conv2DSpec::new_3x3_same(32, 32);
    c.bench_function("conv2d 3x3 same 32ch 64px", |bench| {
        bench.iter(|| {
            let mut tape = Tape::inference();
            let xv = tape.leaf(black_box(x.clone()));
            let wv = tape.leaf(w.clone());
            let bv = tape.leaf(b.clone());
            let y = tape.conv2d(xv, wv, Some(bv), &spec).unwrap();
            black_box(tape.value(y).data()[0])
        })
    });
}

fn bench_conv2d_backward(c: &mut Criterion) {
    let x = random_tensor(Shape4::new(1, 16, 64, 64), 4);
    let w = random_tensor(Shape4::new(16, 16, 3, 3), 5);
    let spec = Conv2DSpec { bias: false, ..Conv2DSpec::new_3x3_same(16, 16) };
    c.bench_function("conv2d 3x3 forward+backward 16ch 64px", |bench| {
        bench.iter(|| {
            let mut tape = Tape::new();
            let mut reg = ParamRegistry::new();
            let mut xg = x.clone();
            xg.requires_grad = true;
            let mut wg = w.clone();
            wg.requires_grad = true;
            let xv = tape.leaf(xg);
            let wv = tape.leaf(wg);
            let y = tape.conv2d(xv, wv, None, &spec).unwrap();
            let loss = tape.sum(y).unwrap();
            tape.backward(loss, &mut reg).unwrap();
            black_box(tape.grad(wv).unwrap()[0])
        })
    });
}

fn bench_mish(c: &mut Criterion) {
    let x = random_tensor(Shape4::new(1, 1, 1024, 1024), 6);
    c.bench_function("mish 1M elements", |bench| {
        bench.iter(|| {
            let mut tape = Tape::inference();
            let xv = tape.leaf(black_box(x.clone()));
            let y = tape.mish(xv).unwrap();
            black_box(tape.value(y).data()[0])
        })
    });
}

fn bench_weighted_bce(c: &mut Criterion) {
    let pred: Vec<f32> = (0..1 << 20).map(|i| 0.1 + 0.8 * ((i % 97) as f32 / 97.0)).collect();
    let target: Vec<f32> = (0..1 << 20).map(|i| f32::from(i % 13 == 0)).collect();
    c.bench_function("weighted bce 1M voxels", |bench| {
        bench.iter(|| black_box(weighted_bce_value(&pred, &target, 42.0f32)))
    });
}

fn bench_model_forward(c: &mut Criterion) {
    let (model, mut reg) =
        UdetModel::build::<f32>(VariantSpec::udet(), 64, WidthScale::Eighth).unwrap();
    init_weights(&model, &mut reg, 7);
    let x = random_tensor(Shape4::new(1, 1, 64, 64), 8);
    c.bench_function("model infer 64px eighth-width", |bench| {
        bench.iter(|| black_box(model.infer(&reg, &x).unwrap().data()[0]))
    });
}

fn bench_model_train_step(c: &mut Criterion) {
    let (model, mut reg) =
        UdetModel::build::<f32>(VariantSpec::udet(), 64, WidthScale::Eighth).unwrap();
    init_weights(&model, &mut reg, 9);
    let x = random_tensor(Shape4::new(2, 1, 64, 64), 10);
    let target = Tensor4::from_fn(Shape4::new(2, 1, 64, 64), |i| f32::from(i % 11 == 0));
    c.bench_function("model forward+backward 64px eighth-width batch2", |bench| {
        bench.iter(|| {
            let mut tape = Tape::new();
            let xv = tape.leaf(x.clone());
            let tv = tape.constant(target.clone());
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let out = model
                .forward(&mut tape, &reg, xv, Mode::Train, false, Some(&mut rng))
                .unwrap();
            let loss = tape.weighted_bce(out, tv, 10.0).unwrap();
            reg.zero_grads();
            tape.backward(loss, &mut reg).unwrap();
            black_box(tape.value(loss).data()[0])
        })
    });
}

criterion_group! {
    name = kernels;
    config = Criterion::default().sample_size(20);
    targets = bench_conv2d, bench_conv2d_backward, bench_mish, bench_weighted_bce,
              bench_model_forward, bench_model_train_step
}
criterion_main!(kernels);
