use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use kml_bench::{cluster_samples, small_classifier, RAW_CONFIG};
use kml_core::logbroker::parse_offset_spec;
use kml_core::mlengine::{init_params, predict, train, Matrix};
use kml_core::{Broker, InputConfig, InputFormat, RetentionPolicy, TrainingConfig};

fn codec(c: &mut Criterion) {
    let input = InputConfig::parse(InputFormat::Raw, RAW_CONFIG).unwrap();
    let samples = cluster_samples(275, 1);
    let encoded: Vec<Vec<u8>> = samples.iter().map(|s| input.encode(s).unwrap()).collect();
    c.bench_function("raw encode 275", |b| {
        b.iter(|| {
            samples
                .iter()
                .map(|s| input.encode(black_box(s)).unwrap())
                .collect::<Vec<_>>()
        })
    });
    c.bench_function("raw decode 275", |b| {
        b.iter(|| {
            encoded
                .iter()
                .map(|v| input.decode(black_box(v), true).unwrap())
                .collect::<Vec<_>>()
        })
    });
    c.bench_function("offset spec parse", |b| {
        b.iter(|| parse_offset_spec(black_box("kafka-ml:0:0:70000")).unwrap())
    });
}

fn broker(c: &mut Criterion) {
    let value = vec![7u8; 20];
    c.bench_function("broker produce+fetch 1000", |b| {
        b.iter_batched(
            || {
                let broker = Broker::new();
                broker
                    .create_topic("t", 1, RetentionPolicy::default())
                    .unwrap();
                broker
            },
            |broker| {
                for _ in 0..1000 {
                    broker.produce("t", Some(0), None, value.clone()).unwrap();
                }
                broker.fetch("t", 0, 0, 1000).unwrap().len()
            },
            BatchSize::SmallInput,
        )
    });
}

fn engine(c: &mut Criterion) {
    let spec = small_classifier();
    let samples = cluster_samples(220, 2);
    let model = init_params(&spec, 0);
    let cfg = TrainingConfig {
        batch_size: 10,
        epochs: 1,
        steps_per_epoch: Some(22),
        seed: 3,
        ..TrainingConfig::default()
    };
    c.bench_function("train one epoch (22 steps of 10)", |b| {
        b.iter(|| train(black_box(&model), &samples, &cfg).unwrap())
    });
    let rows: Vec<Vec<f64>> = samples.iter().map(|s| s.features.values.clone()).collect();
    let x = Matrix::from_rows(&rows);
    c.bench_function("predict 220 rows", |b| {
        b.iter(|| predict(&model, black_box(&x)).unwrap())
    });
}

criterion_group!(benches, codec, broker, engine);
criterion_main!(benches);
