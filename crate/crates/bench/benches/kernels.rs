use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use rejuv_bench::{batch, corpus, model};
use rejuv_core::analysis::{bleu, train_ibm1};
use rejuv_core::inference::{decode, score_corpus};
use rejuv_core::DecodeConfig;

fn gradients(c: &mut Criterion) {
    let data = corpus(200);
    let mut group = c.benchmark_group("batch_grad");
    for hidden in [32, 64] {
        let m = model(&data, hidden);
        let b = batch(&m, &data, 32);
        group.bench_with_input(BenchmarkId::from_parameter(hidden), &b, |bench, b| {
            bench.iter(|| m.batch_grad(black_box(b)).unwrap())
        });
    }
    group.finish();
}

fn scoring(c: &mut Criterion) {
    let data = corpus(500);
    let m = model(&data, 64);
    c.bench_function("score_corpus/500", |b| {
        b.iter(|| score_corpus(&m, black_box(&data)).unwrap())
    });
}

fn decoding(c: &mut Criterion) {
    let data = corpus(50);
    let m = model(&data, 64);
    let mut group = c.benchmark_group("decode");
    for (name, cfg) in [("greedy", DecodeConfig::greedy()), ("beam5", DecodeConfig::beam(5))] {
        group.bench_function(name, |b| {
            b.iter(|| {
                for p in data.iter() {
                    decode(&m, black_box(&p.src), &cfg).unwrap();
                }
            })
        });
    }
    group.finish();
}

fn alignment(c: &mut Criterion) {
    let data = corpus(2000);
    c.bench_function("ibm1/2000x5", |b| b.iter(|| train_ibm1(black_box(&data), 5).unwrap()));
}

fn corpus_bleu(c: &mut Criterion) {
    let data = corpus(2000);
    let refs: Vec<Vec<String>> = data.iter().map(|p| p.tgt.clone()).collect();
    let mut cands = refs.clone();
    cands.rotate_left(1);
    c.bench_function("bleu/2000", |b| b.iter(|| bleu(black_box(&cands), &refs).unwrap()));
}

criterion_group!(benches, gradients, scoring, decoding, alignment, corpus_bleu);
criterion_main!(benches);
