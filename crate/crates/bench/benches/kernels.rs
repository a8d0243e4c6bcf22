use criterion::{black_box, criterion_group, criterion_main, BatchSize, BenchmarkId, Criterion};
use match_bench::dataset;
use match_core::autodiff::Graph;
use match_core::classifier::TrainConfig;
use match_core::corpus::Partition;
use match_core::encoder::{EncoderConfig, Mode};
use match_core::metrics::{ndcg_at_k, EvalReport};
use match_core::sphere::{Part, PretrainConfig, Pretrainer};
use match_core::{top_k_labels, LabelId, MatchModel};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn encoder_config(dim: usize) -> EncoderConfig {
    EncoderConfig {
        dim,
        layers: 2,
        heads: 2,
        cls_tokens: 2,
        max_len: 64,
        ..Default::default()
    }
}

fn attention(c: &mut Criterion) {
    let data = dataset(200);
    let docs = data.docs(Partition::Train).unwrap();
    let mut group = c.benchmark_group("attention_forward");
    for dim in [16, 64] {
        let model = MatchModel::new(
            &data.corpus.vocab,
            data.hierarchy.edge_list(),
            &encoder_config(dim),
            None,
            false,
            0,
        )
        .unwrap();
        let encoder = &model.encoder;
        group.bench_with_input(BenchmarkId::new("one_layer", dim), &dim, |b, _| {
            b.iter(|| {
                let mut g = Graph::new();
                let (h, _) = encoder.input_sequence(&mut g, &model.params, docs[0]).unwrap();
                black_box(
                    encoder
                        .multi_head_attention(&mut g, &model.params, 0, h, h)
                        .unwrap(),
                );
            })
        });
        group.bench_with_input(BenchmarkId::new("encode_document", dim), &dim, |b, _| {
            b.iter(|| {
                let mut g = Graph::new();
                black_box(
                    encoder
                        .encode_document(&mut g, &model.params, docs[0], &mut Mode::Eval)
                        .unwrap(),
                );
            })
        });
    }
    group.finish();
}

fn training_step(c: &mut Criterion) {
    let data = dataset(200);
    let docs = data.docs(Partition::Train).unwrap();
    let batch: Vec<_> = docs.iter().take(32).copied().collect();
    let model = MatchModel::new(
        &data.corpus.vocab,
        data.hierarchy.edge_list(),
        &encoder_config(16),
        None,
        false,
        0,
    )
    .unwrap();
    let config = TrainConfig::default();
    c.bench_function("objective_forward_backward_batch32", |b| {
        b.iter(|| {
            let mut g = Graph::new();
            let obj = model.objective(&mut g, &batch, &config, &mut Mode::Eval).unwrap();
            black_box(g.backward(obj.total).unwrap());
        })
    });
}

fn pretrain_updates(c: &mut Criterion) {
    let data = dataset(500);
    let docs = data.docs(Partition::Train).unwrap();
    let mut group = c.benchmark_group("pretrain_updates");
    for dim in [16, 100] {
        let config = PretrainConfig {
            dim,
            ..Default::default()
        };
        group.bench_with_input(BenchmarkId::new("1000_pairs", dim), &dim, |b, _| {
            b.iter_batched(
                || {
                    let trainer = Pretrainer::new(&docs, &data.corpus.vocab, &config).unwrap();
                    let mut rng = ChaCha8Rng::seed_from_u64(0);
                    let pairs: Vec<_> = (0..1000)
                        .map(|i| trainer.sampler().sample(Part::ALL[i % 4], &mut rng).unwrap())
                        .collect();
                    (trainer, pairs)
                },
                |(mut trainer, pairs)| {
                    for p in &pairs {
                        black_box(trainer.update(p).unwrap());
                    }
                },
                BatchSize::LargeInput,
            )
        });
    }
    group.finish();
}

fn metrics(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let num_labels = 200;
    let probs: Vec<Vec<f64>> = (0..1000)
        .map(|_| (0..num_labels).map(|_| rng.gen()).collect())
        .collect();
    let truths: Vec<Vec<LabelId>> = (0..1000)
        .map(|_| {
            let mut ids: Vec<LabelId> = (0..num_labels as LabelId).collect();
            ids.shuffle(&mut rng);
            ids.truncate(rng.gen_range(1..6));
            ids.sort_unstable();
            ids
        })
        .collect();
    let rankings: Vec<Vec<LabelId>> = probs.iter().map(|p| top_k_labels(p, 5)).collect();
    c.bench_function("top_k_1000_docs_200_labels", |b| {
        b.iter(|| {
            for p in &probs {
                black_box(top_k_labels(p, 5));
            }
        })
    });
    c.bench_function("ndcg5_1000_docs", |b| {
        b.iter(|| {
            for (t, r) in truths.iter().zip(&rankings) {
                black_box(ndcg_at_k(t, r, 5).unwrap());
            }
        })
    });
    c.bench_function("eval_report_1000_docs", |b| {
        b.iter(|| {
            let items = truths
                .iter()
                .zip(&rankings)
                .map(|(t, r)| ("d", t.as_slice(), r.as_slice()));
            black_box(EvalReport::from_rankings(items, "bench").unwrap());
        })
    });
}

criterion_group!(benches, attention, training_step, pretrain_updates, metrics);
criterion_main!(benches);
