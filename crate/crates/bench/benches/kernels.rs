use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ridetrace_core::cnn::{CnnModel, CnnSpec};
use ridetrace_core::features::robust_similarity;
use ridetrace_core::forest::{train_forest, ForestParams};

fn coverage(rng: &mut ChaCha8Rng, density: f64) -> Array2<bool> {
    Array2::from_shape_fn((24, 24), |_| rng.random_bool(density))
}

fn similarity(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = coverage(&mut rng, 0.1);
    let b = coverage(&mut rng, 0.1);
    c.bench_function("robust_similarity 24x24", |bench| {
        bench.iter(|| robust_similarity(black_box(&a), black_box(&b)).unwrap())
    });
}

fn forest(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let y: Vec<bool> = (0..500).map(|i| i % 3 == 0).collect();
    let x: Vec<Vec<f64>> = y
        .iter()
        .map(|&pos| (0..15).map(|k| rng.random::<f64>() + if pos && k % 2 == 0 { 0.4 } else { 0.0 }).collect())
        .collect();
    let names: Vec<String> = (0..15).map(|k| format!("f{k}")).collect();
    let params = ForestParams::default();
    c.bench_function("train_forest 500x15, 100 trees", |bench| {
        bench.iter(|| train_forest(black_box(&x), black_box(&y), &names, &params).unwrap())
    });
    let model = train_forest(&x, &y, &names, &params).unwrap();
    c.bench_function("forest predict_proba", |bench| {
        bench.iter(|| model.predict_proba(black_box(&x[7])).unwrap())
    });
}

fn cnn(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let day = CnnModel::<f32>::init(CnnSpec::day_level(24, 24), 4).unwrap();
    let x: Vec<f32> = (0..day.spec.input_len()).map(|_| rng.random::<f32>()).collect();
    c.bench_function("day cnn predict 24x24", |bench| {
        bench.iter(|| day.predict(black_box(&x)).unwrap())
    });
    c.bench_function("day cnn backward 24x24", |bench| {
        bench.iter(|| day.backward(black_box(&[(x.as_slice(), true)])).unwrap())
    });
    let car = CnnModel::<f32>::init(CnnSpec::car_level(7, 24, 24), 5).unwrap();
    let stack: Vec<f32> = (0..car.spec.input_len()).map(|_| rng.random::<f32>()).collect();
    c.bench_function("car cnn predict 7x24x24", |bench| {
        bench.iter(|| car.predict(black_box(&stack)).unwrap())
    });
}

criterion_group!(benches, similarity, forest, cnn);
criterion_main!(benches);
