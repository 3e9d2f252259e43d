use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use brainmap::corpus::TfIdfIndex;
use brainmap::eval::{auc, dice, topk_mask};
use brainmap::netgen::{Arch, Checkpoint, EncoderConfig, Model};
use brainmap::synthetic::{synthetic_corpus, SynthConfig};
use brainmap::volgrid::{synthesize_target, GridSpec};

fn targets(c: &mut Criterion) {
    let grid = GridSpec::default();
    let corpus = synthetic_corpus(&SynthConfig::default());
    let peaks = &corpus.records()[0].coordinates;
    c.bench_function("synthesize_target", |b| {
        b.iter(|| synthesize_target(&grid, black_box(peaks), 9.0).unwrap())
    });
}

fn metrics(c: &mut Criterion) {
    let grid = GridSpec::default();
    let corpus = synthetic_corpus(&SynthConfig::default());
    let a = synthesize_target(&grid, &corpus.records()[0].coordinates, 9.0).unwrap();
    let t = synthesize_target(&grid, &corpus.records()[4].coordinates, 9.0).unwrap();
    let (ma, mt) = (topk_mask(&a, 0.1).unwrap(), topk_mask(&t, 0.1).unwrap());
    c.bench_function("topk_mask 0.1", |b| b.iter(|| topk_mask(black_box(&a), 0.1).unwrap()));
    c.bench_function("dice", |b| b.iter(|| dice(black_box(&ma), black_box(&mt)).unwrap()));
    c.bench_function("auc", |b| b.iter(|| auc(black_box(&a), black_box(&mt)).unwrap()));
}

fn search(c: &mut Criterion) {
    let corpus = synthetic_corpus(&SynthConfig {
        studies: 5000,
        ..Default::default()
    });
    let index = TfIdfIndex::build(corpus.records().iter().map(|r| (r.id.as_str(), r.title.as_str()))).unwrap();
    c.bench_function("tfidf search 5000 docs", |b| {
        b.iter(|| index.search(black_box("pain heat insula cortex"), 5))
    });
}

fn forward(c: &mut Criterion) {
    let model = Model::<f32>::init(Arch::default(), EncoderConfig::default(), 0).unwrap();
    let ck = Checkpoint::new(GridSpec::default(), model).unwrap();
    let mut g = c.benchmark_group("generator");
    g.sample_size(10);
    g.bench_function("predict_text", |b| {
        b.iter(|| ck.predict_text(black_box("working memory load prefrontal")).unwrap())
    });
    g.finish();
}

criterion_group!(benches, targets, metrics, search, forward);
criterion_main!(benches);
