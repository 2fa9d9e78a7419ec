use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

use malrag_bench::{corpus, indexed};
use malrag_core::config::Preset;
use malrag_core::retriever::softmax_probabilities;
use malrag_core::{retrieve, ChunkPool, HashingEmbedder, SegmenterConfig, SentenceSplitter};

const QUERY: &str = "what was measured in the third sample and how did it change";

fn sentences(c: &mut Criterion) {
    let docs = corpus(20);
    let text: String = docs
        .iter()
        .flat_map(|d| d.paragraphs().map(|(_, p)| p.text.clone()))
        .collect::<Vec<_>>()
        .join(" ");
    let splitter = SentenceSplitter::default();
    let mut group = c.benchmark_group("split");
    group.throughput(Throughput::Bytes(text.len() as u64));
    group.bench_function("sentences", |b| b.iter(|| splitter.split(black_box(&text))));
    group.finish();
}

fn segmentation(c: &mut Criterion) {
    let docs = corpus(20);
    let splitter = SentenceSplitter::default();
    let cfg = SegmenterConfig::default();
    c.bench_function("segment/20_docs", |b| {
        b.iter(|| {
            docs.iter()
                .map(|d| malrag_core::segmenter::segment_document(d, &cfg, &splitter).len())
                .sum::<usize>()
        })
    });
}

fn scoring(c: &mut Criterion) {
    let embedder = HashingEmbedder::default();
    let mut group = c.benchmark_group("score_all");
    for n in [50, 200] {
        let db = indexed(&corpus(n));
        group.throughput(Throughput::Elements(db.record_count() as u64));
        group.bench_with_input(BenchmarkId::from_parameter(n), &db, |b, db| {
            b.iter(|| db.score_all(black_box(QUERY), &embedder, &ChunkPool::all_levels()).unwrap())
        });
    }
    group.finish();
}

fn retrieval(c: &mut Criterion) {
    let db = indexed(&corpus(100));
    let embedder = HashingEmbedder::default();
    let mut group = c.benchmark_group("retrieve");
    for name in ["mal-tau05", "mal-notau", "paragraph-tau05", "vanilla-tau05"] {
        let cfg = name.parse::<Preset>().unwrap().retriever_config();
        group.bench_function(name, |b| b.iter(|| retrieve(black_box(QUERY), &db, &embedder, &cfg).unwrap()));
    }
    group.finish();
}

fn softmax(c: &mut Criterion) {
    let sims: Vec<f64> = (0..5000).map(|i| ((i * 7919) % 2001) as f64 / 1000.0 - 1.0).collect();
    c.bench_function("softmax/5000", |b| b.iter(|| softmax_probabilities(black_box(&sims)).unwrap()));
}

criterion_group!(benches, sentences, segmentation, scoring, retrieval, softmax);
criterion_main!(benches);
