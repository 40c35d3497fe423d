use criterion::{criterion_group, criterion_main, Criterion};
use glyphgen::corpus::{synthesize_corpus, SynthSpec};
use glyphgen::evaluation::frechet_distance;
use glyphgen::labelspace::{build_cooccurrence, build_cooccurrence_allowing_unseen, complete_all};
use glyphgen::nets::ProgressiveStage;
use glyphgen::semantics::HashProvider;
use glyphgen::training::{train, TrainConfig, TrainOptions};
use glyphgen::util::{normal_vec, rng_for};
use std::hint::black_box;

fn labelspace(c: &mut Criterion) {
    let spec = SynthSpec {
        n_fonts: 1000,
        resolution: 16,
        ..SynthSpec::default()
    };
    let labels = synthesize_corpus(&spec).unwrap().corpus.label_matrix();
    c.bench_function("cooccurrence 1000 fonts", |b| b.iter(|| build_cooccurrence(black_box(&labels)).unwrap()));
    let t = build_cooccurrence(&labels).unwrap();
    c.bench_function("complete 1000 fonts", |b| b.iter(|| complete_all(black_box(&labels), &t).unwrap()));
}

fn frechet(c: &mut Criterion) {
    let mut rng = rng_for(0, &[]);
    let a: Vec<Vec<f64>> = (0..500).map(|_| normal_vec(&mut rng, 64)).collect();
    let b: Vec<Vec<f64>> = (0..500).map(|_| normal_vec(&mut rng, 64)).collect();
    c.bench_function("frechet 500x64", |bench| bench.iter(|| frechet_distance(black_box(&a), black_box(&b)).unwrap()));
}

fn generation(c: &mut Criterion) {
    let spec = SynthSpec {
        n_fonts: 64,
        resolution: 16,
        ..SynthSpec::default()
    };
    let corpus = synthesize_corpus(&spec).unwrap().corpus;
    let mut cfg = TrainConfig::desk(corpus.k());
    cfg.iterations = 1;
    let t = build_cooccurrence_allowing_unseen(&corpus.label_matrix());
    let mut model = train(&cfg, &corpus, &t, &HashProvider::new(cfg.model.embed_dim, 0), &TrainOptions::default())
        .unwrap()
        .model;
    model.stage = ProgressiveStage::steady(cfg.model.max_stage);
    let imps = vec![(model.vocabulary.name(0).to_string(), 1.0)];
    c.bench_function("generate 9 glyphs at 16px", |b| {
        b.iter(|| model.generate(black_box(&imps), "ABCHERONS", 7).unwrap())
    });
}

fn config() -> Criterion {
    Criterion::default().sample_size(20)
}

criterion_group! { name = benches; config = config(); targets = labelspace, frechet, generation }
criterion_main!(benches);
