//! Distribution checks for pre-training pair sampling.

use match_core::corpus::{Corpus, RawDocument, Schema, Vocabulary};
use match_core::sphere::{context_window, sample_label_negative, PairSampler, Part};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

const DRAWS: usize = 10_000;

fn chi_square_p_value(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    let expected = total as f64 / counts.len() as f64;
    let stat: f64 = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    let dist = ChiSquared::new((counts.len() - 1) as f64).unwrap();
    1.0 - dist.cdf(stat)
}

/// Position of `negative` among the candidates `1..size` with `positive`
/// removed, so a uniform sampler gives a uniform position.
fn candidate_rank(negative: usize, positive: usize) -> usize {
    assert_ne!(negative, positive);
    assert_ne!(negative, 0, "UNK drawn as a negative");
    negative - 1 - usize::from(negative > positive)
}

fn corpus() -> Corpus {
    let raw: Vec<RawDocument> = (0..40)
        .map(|i| RawDocument {
            id: format!("d{i}"),
            text: vec![(0..8).map(|j| format!("w{}", (i * 3 + j) % 11)).collect(), vec![]],
            metadata: vec![vec![format!("v{}", i % 7)], vec![], vec![]],
            labels: vec![format!("l{}", i % 4), format!("l{}", 4 + i % 3)],
        })
        .collect();
    let vocab = Vocabulary::build(&raw, &Schema::default(), 1, None).unwrap();
    Corpus::resolve(&raw, vocab, None).unwrap()
}

#[test]
fn metadata_negatives_are_uniform_over_the_complement() {
    let corpus = corpus();
    let docs: Vec<_> = corpus.docs.iter().collect();
    let sampler = PairSampler::new(&docs, &corpus.vocab, 2).unwrap();
    let venues = corpus.vocab.metadata_table(0).len();
    let mut counts = vec![0; venues - 2];
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..DRAWS {
        let pair = sampler.sample(Part::DocMeta, &mut rng).unwrap();
        assert_eq!(pair.kind, Some(0));
        let doc = docs[pair.anchor];
        assert!(doc.metadata.iter().any(|m| m.id as usize == pair.positive));
        counts[candidate_rank(pair.negative, pair.positive)] += 1;
    }
    let p = chi_square_p_value(&counts);
    assert!(p > 0.01, "p = {p}, counts {counts:?}");
}

#[test]
fn word_negatives_are_uniform_over_the_complement() {
    let corpus = corpus();
    let docs: Vec<_> = corpus.docs.iter().collect();
    let sampler = PairSampler::new(&docs, &corpus.vocab, 2).unwrap();
    let words = corpus.vocab.words.len();
    for (part, seed) in [(Part::DocWord, 5), (Part::WordContext, 6)] {
        let mut counts = vec![0; words - 2];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..DRAWS {
            let pair = sampler.sample(part, &mut rng).unwrap();
            counts[candidate_rank(pair.negative, pair.positive)] += 1;
        }
        let p = chi_square_p_value(&counts);
        assert!(p > 0.01, "{}: p = {p}, counts {counts:?}", part.name());
    }
}

#[test]
fn context_pairs_lie_inside_the_window() {
    let corpus = corpus();
    let docs: Vec<_> = corpus.docs.iter().collect();
    let window = 2;
    let sampler = PairSampler::new(&docs, &corpus.vocab, window).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..2000 {
        let pair = sampler.sample(Part::WordContext, &mut rng).unwrap();
        let witnessed = docs.iter().any(|d| {
            d.words.iter().enumerate().any(|(i, &w)| {
                w as usize == pair.positive
                    && context_window(d.words.len(), i, window)
                        .iter()
                        .any(|&c| d.words[c] as usize == pair.anchor)
            })
        });
        assert!(witnessed, "{pair:?} is not a co-occurrence within the window");
    }
}

#[test]
fn label_negatives_are_uniform_over_irrelevant_labels() {
    let relevant = [1, 4, 5, 9];
    let num_labels = 12;
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let complement: Vec<u32> = (0..num_labels).filter(|l| !relevant.contains(l)).collect();
    let mut counts = vec![0; complement.len()];
    for _ in 0..DRAWS {
        let l = sample_label_negative(&relevant, num_labels as usize, &mut rng).unwrap();
        let slot = complement
            .iter()
            .position(|&c| c == l)
            .expect("negative is a relevant label");
        counts[slot] += 1;
    }
    let p = chi_square_p_value(&counts);
    assert!(p > 0.01, "p = {p}, counts {counts:?}");
}

#[test]
fn document_label_pairs_draw_from_the_document() {
    let corpus = corpus();
    let docs: Vec<_> = corpus.docs.iter().collect();
    let sampler = PairSampler::new(&docs, &corpus.vocab, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..2000 {
        let pair = sampler.sample(Part::DocLabel, &mut rng).unwrap();
        let labels = &docs[pair.anchor].labels;
        assert!(labels.contains(&(pair.positive as u32)));
        assert!(!labels.contains(&(pair.negative as u32)));
    }
}
