use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use hsd_bench::{documents, vote_rows};
use hsd_core::annotation::{fleiss_kappa, AssignmentMatrix};
use hsd_core::attention::{compressed_multi_head, multi_head, AttentionConfig, AttentionParams};
use hsd_core::features::{build_cooccurrence, glove_train, tfidf_matrix, GloveConfig, IdfMode, Vocabulary};
use ndarray::Array2;

fn attention(c: &mut Criterion) {
    let mut group = c.benchmark_group("attention");
    for n in [32, 128] {
        let cfg = AttentionConfig::scaled(4, 16, n);
        let params = AttentionParams::seeded(&cfg, true, 1);
        let x = Array2::from_shape_fn((n, cfg.d_model), |(i, j)| ((i * 13 + j) as f64 * 0.1).sin());
        group.bench_with_input(BenchmarkId::new("dense", n), &x, |b, x| {
            b.iter(|| multi_head(&x.view(), &params).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("linformer", n), &x, |b, x| {
            b.iter(|| compressed_multi_head(&x.view(), &params).unwrap())
        });
    }
    group.finish();
}

fn tfidf(c: &mut Criterion) {
    let docs = documents(20);
    let vocab = Vocabulary::build(&docs);
    let ids: Vec<String> = (0..docs.len()).map(|i| i.to_string()).collect();
    c.bench_function("tfidf/1200-docs", |b| {
        b.iter(|| tfidf_matrix(ids.clone(), black_box(&docs), &vocab, IdfMode::Literal))
    });
}

fn kappa(c: &mut Criterion) {
    let matrix = AssignmentMatrix::from_rows(vote_rows(10_000), 3).unwrap();
    c.bench_function("kappa/10k-items", |b| {
        b.iter(|| fleiss_kappa(black_box(&matrix)).unwrap())
    });
}

fn glove(c: &mut Criterion) {
    let docs = documents(5);
    let vocab = Vocabulary::build(&docs);
    let x = build_cooccurrence(&docs, &vocab, 5).unwrap();
    let config = GloveConfig {
        dim: 25,
        epochs: 5,
        ..GloveConfig::default()
    };
    c.bench_function("glove/5-epochs", |b| {
        b.iter(|| glove_train(black_box(&x), &config).unwrap())
    });
}

criterion_group!(benches, attention, tfidf, kappa, glove);
criterion_main!(benches);
