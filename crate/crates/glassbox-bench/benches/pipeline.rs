use std::hint::black_box;
use std::sync::OnceLock;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use glassbox_core::corpus::{synthesize, SynthConfig, SynthOutput};
use glassbox_core::interpret::{run_method, InterpreterConfig, Method};
use glassbox_core::metrics::{era_metric, mma_metric};
use glassbox_core::model::{Activation, ClassifierModel, EmbeddedText};
use glassbox_core::train::{train, TrainConfig};

struct Fixture {
    model: ClassifierModel,
    text: EmbeddedText,
    class: usize,
}

static FIXTURE: OnceLock<Fixture> = OnceLock::new();

fn fixture() -> &'static Fixture {
    FIXTURE.get_or_init(|| {
        let SynthOutput { corpus, table, .. } = synthesize(&SynthConfig {
            vocab: 36,
            dim: 6,
            min_len: 8,
            max_len: 8,
            instances: 120,
            seed: 5,
        })
        .expect("synthesis");
        let model = train(
            &ClassifierModel::attention(6, 8, 2, Activation::Tanh, 7),
            &corpus,
            &table,
            &TrainConfig { epochs: 5, ..TrainConfig::default() },
        )
        .expect("training")
        .model;
        let text = table.embed(&corpus.instances[0].tokens).expect("embed");
        let class = model.predict_class(&text).expect("predict");
        Fixture { model, text, class }
    })
}

fn bench_gradients(c: &mut Criterion) {
    let f = fixture();
    let mut group = c.benchmark_group("gradient");
    group.bench_function("forward", |b| {
        b.iter(|| black_box(f.model.predict(black_box(&f.text)).unwrap()))
    });
    group.bench_function("forward_backward", |b| {
        b.iter(|| black_box(f.model.probability_gradient(black_box(&f.text), f.class).unwrap()))
    });
    group.finish();
}

fn bench_methods(c: &mut Criterion) {
    let f = fixture();
    let cfg = InterpreterConfig::default();
    let mut group = c.benchmark_group("attribution");
    for method in Method::ALL {
        group.bench_with_input(
            BenchmarkId::from_parameter(method.name()),
            &method,
            |b, &m| b.iter(|| black_box(run_method(&f.model, &f.text, f.class, m, &cfg).unwrap())),
        );
    }
    group.finish();
}

fn bench_metrics(c: &mut Criterion) {
    let f = fixture();
    let cfg = InterpreterConfig::default();
    let attr = run_method(&f.model, &f.text, f.class, Method::InteGrad, &cfg).unwrap();
    let mut group = c.benchmark_group("metric");
    group.bench_function("erasure_s3", |b| {
        b.iter(|| black_box(era_metric(&f.model, &f.text, f.class, &attr, 3).unwrap()))
    });
    group.bench_function("masking_s3", |b| {
        b.iter(|| black_box(mma_metric(&f.model, &f.text, f.class, &attr, 3).unwrap()))
    });
    group.finish();
}

criterion_group!(benches, bench_gradients, bench_methods, bench_metrics);
criterion_main!(benches);
