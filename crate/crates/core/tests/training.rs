//! Classifier training, checkpoints, and gradient checks on small models.

use match_core::autodiff::{grad_check, GradCheckOptions};
use match_core::classifier::{train_classifier, MatchModel, TrainConfig};
use match_core::corpus::{Corpus, Partition, RawDocument, Schema, SynthConfig, Vocabulary};
use match_core::encoder::{EncoderConfig, Mode};
use match_core::pipeline::Dataset;
use match_core::taxonomy::LabelHierarchy;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn encoder_config() -> EncoderConfig {
    EncoderConfig {
        dim: 16,
        layers: 1,
        heads: 2,
        cls_tokens: 2,
        max_len: 48,
        ..Default::default()
    }
}

fn planted() -> Dataset {
    let synth = SynthConfig {
        docs: 300,
        word_signal: 1.0,
        metadata_signal: 1.0,
        extra_leaf_prob: 0.0,
        ..Default::default()
    };
    Dataset::synthetic(&synth, 5, (0.8, 0.1, 0.1), 0).unwrap()
}

fn train_config(epochs: usize, patience: usize) -> TrainConfig {
    TrainConfig {
        lr: 3e-3,
        batch_size: 32,
        epochs,
        patience,
        seed: 1,
        ..Default::default()
    }
}

fn model(data: &Dataset, seed: u64) -> MatchModel {
    MatchModel::new(
        &data.corpus.vocab,
        data.hierarchy.edge_list(),
        &encoder_config(),
        None,
        false,
        seed,
    )
    .unwrap()
}

#[test]
fn planted_corpus_is_learned_within_twenty_epochs() {
    let data = planted();
    let train = data.docs(Partition::Train).unwrap();
    let validation = data.docs(Partition::Validation).unwrap();
    let outcome = train_classifier(model(&data, 0), &train, &validation, &train_config(20, 0)).unwrap();
    let (report, _) = outcome.model.evaluate(&train, "train").unwrap();
    assert!(report.p1 >= 0.95, "training P@1 {}", report.p1);
    assert_eq!(outcome.history.len(), 20);
    let first = outcome.history.first().unwrap().mean_loss;
    let last = outcome.history.last().unwrap().mean_loss;
    assert!(last < first, "loss {first} -> {last}");
}

#[test]
fn fixed_seed_reproduces_metrics_exactly() {
    let data = planted();
    let train = data.docs(Partition::Train).unwrap();
    let validation = data.docs(Partition::Validation).unwrap();
    let test = data.docs(Partition::Test).unwrap();
    let run = || {
        let outcome = train_classifier(model(&data, 3), &train, &validation, &train_config(2, 0)).unwrap();
        outcome.model.evaluate(&test, "x").unwrap().0
    };
    assert_eq!(run(), run());
}

#[test]
fn early_stopping_keeps_best_epoch() {
    let data = planted();
    let train = data.docs(Partition::Train).unwrap();
    let validation = data.docs(Partition::Validation).unwrap();
    let config = train_config(30, 1);
    let outcome = train_classifier(model(&data, 2), &train, &validation, &config).unwrap();
    let best = outcome
        .history
        .iter()
        .map(|r| r.validation.ndcg3)
        .fold(f64::NEG_INFINITY, f64::max);
    let record = &outcome.history[outcome.best_epoch - 1];
    assert_eq!(record.validation.ndcg3, best);
    let (report, _) = outcome.model.evaluate(&validation, "seed=1").unwrap();
    assert_eq!(report.ndcg3, best);
    if outcome.history.len() < config.epochs {
        assert_eq!(outcome.history.len(), outcome.best_epoch + config.patience);
    }
}

#[test]
fn empty_training_split_is_an_error() {
    let data = planted();
    let validation = data.docs(Partition::Validation).unwrap();
    assert!(train_classifier(model(&data, 0), &[], &validation, &train_config(1, 0)).is_err());
    let train = data.docs(Partition::Train).unwrap();
    assert!(train_classifier(model(&data, 0), &train, &[], &train_config(1, 0)).is_err());
}

#[test]
fn checkpoint_roundtrip_gives_identical_predictions() {
    let data = planted();
    let train = data.docs(Partition::Train).unwrap();
    let validation = data.docs(Partition::Validation).unwrap();
    let outcome = train_classifier(model(&data, 4), &train, &validation, &train_config(1, 0)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    outcome.model.save(dir.path()).unwrap();
    let loaded = MatchModel::load(dir.path(), &data.corpus.vocab).unwrap();
    assert_eq!(loaded.edges, outcome.model.edges);
    assert_eq!(loaded.num_labels, outcome.model.num_labels);
    assert_eq!(
        loaded.predict(&validation).unwrap(),
        outcome.model.predict(&validation).unwrap()
    );
}

fn random_instance(seed: u64) -> (Corpus, LabelHierarchy) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<String> = (0..5).map(|i| format!("l{i}")).collect();
    let mut edges = Vec::new();
    for c in 1..5 {
        edges.push((labels[c].clone(), labels[rng.gen_range(0..c)].clone()));
    }
    let hierarchy = LabelHierarchy::from_edges(&edges, &labels).unwrap();
    let raw: Vec<RawDocument> = (0..3)
        .map(|d| RawDocument {
            id: format!("d{d}"),
            text: vec![
                (0..rng.gen_range(1..6))
                    .map(|_| format!("w{}", rng.gen_range(0..6)))
                    .collect(),
                vec![],
            ],
            metadata: vec![
                vec![format!("v{}", rng.gen_range(0..3))],
                (0..rng.gen_range(0..3))
                    .map(|_| format!("a{}", rng.gen_range(0..4)))
                    .collect(),
                (0..rng.gen_range(0..2))
                    .map(|_| format!("r{}", rng.gen_range(0..4)))
                    .collect(),
            ],
            labels: labels
                .iter()
                .filter(|_| rng.gen_bool(0.5))
                .cloned()
                .chain(["l0".to_string()])
                .collect(),
        })
        .collect();
    let vocab = Vocabulary::build(&raw, &Schema::default(), 1, Some(&hierarchy)).unwrap();
    (Corpus::resolve(&raw, vocab, Some(&hierarchy)).unwrap(), hierarchy)
}

#[test]
fn objective_gradient_matches_finite_differences_on_random_instances() {
    for seed in 0..4 {
        let (corpus, hierarchy) = random_instance(seed);
        let config = EncoderConfig {
            dim: 6,
            layers: 1 + seed as usize % 2,
            heads: 2,
            cls_tokens: 2,
            max_len: 16,
            ..Default::default()
        };
        let mut model =
            MatchModel::new(&corpus.vocab, hierarchy.edge_list(), &config, None, false, seed).unwrap();
        let w = model.head.weights;
        for v in model.params.get_mut(w).data_mut() {
            *v *= 3.0;
        }
        let docs: Vec<_> = corpus.docs.iter().collect();
        let train = TrainConfig {
            lambda1: 0.3,
            lambda2: 0.7,
            ..Default::default()
        };
        let options = GradCheckOptions {
            max_coords_per_param: Some(6),
            seed,
            ..Default::default()
        };
        let report = grad_check(&model.params, &options, |g, p| {
            Ok(model.objective_with(g, p, &docs, &train, &mut Mode::Eval)?.total)
        })
        .unwrap();
        assert!(
            report.max_rel_error <= 1e-4,
            "seed {seed}: {:e} at {}[{}]",
            report.max_rel_error,
            report.worst_param,
            report.worst_index
        );
    }
}
