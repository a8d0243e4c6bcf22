//! Planted-signal corpora over a synthetic label tree.
//!
//! Each label owns a pool of signal words whose first entry is its
//! signature word; each leaf owns pools of venues, authors, and references.
//! A document picks one or two leaves, optionally closes its label set
//! under ancestors, then draws every word and metadata slot either from the
//! matching pool (with the configured signal probability) or uniformly
//! from the global noise pool.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::RawDocument;
use crate::error::{Error, Result};
use crate::taxonomy::{LabelHierarchy, LabelId};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub docs: usize,
    /// Children per node at each level; the first entry is the number of roots.
    pub branching: Vec<usize>,
    pub words_per_label: usize,
    pub noise_vocab: usize,
    /// Filler words per document (signature slots come on top).
    pub doc_len: usize,
    pub word_signal: f64,
    pub metadata_signal: f64,
    pub venues_per_leaf: usize,
    pub authors_per_leaf: usize,
    pub refs_per_leaf: usize,
    pub authors_per_doc: usize,
    pub refs_per_doc: usize,
    /// Probability that a document gets a second leaf.
    pub extra_leaf_prob: f64,
    pub ancestor_closure: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            docs: 2000,
            branching: vec![3, 3, 2],
            words_per_label: 4,
            noise_vocab: 400,
            doc_len: 16,
            word_signal: 0.05,
            metadata_signal: 0.9,
            venues_per_leaf: 2,
            authors_per_leaf: 6,
            refs_per_leaf: 10,
            authors_per_doc: 2,
            refs_per_doc: 2,
            extra_leaf_prob: 0.2,
            ancestor_closure: true,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.branching.is_empty() || self.branching.contains(&0) {
            return Err(Error::Argument(format!(
                "label tree needs depth >= 1 and branching >= 1 at every level, got {:?}",
                self.branching
            )));
        }
        if self.docs == 0 {
            return Err(Error::Argument("docs must be positive".into()));
        }
        if self.words_per_label == 0 || self.noise_vocab == 0 {
            return Err(Error::Argument("word pools must be non-empty".into()));
        }
        if self.venues_per_leaf == 0 || self.authors_per_leaf == 0 || self.refs_per_leaf == 0 {
            return Err(Error::Argument("metadata pools must be non-empty".into()));
        }
        for (name, p) in [
            ("word_signal", self.word_signal),
            ("metadata_signal", self.metadata_signal),
            ("extra_leaf_prob", self.extra_leaf_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Argument(format!("{name} must be in [0, 1], got {p}")));
            }
        }
        Ok(())
    }
}

/// Generates a corpus and its label tree. Identical config and seed give
/// identical output.
pub fn generate_synthetic(config: &SynthConfig, seed: u64) -> Result<(Vec<RawDocument>, LabelHierarchy)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut names: Vec<String> = Vec::new();
    let mut edges: Vec<(String, String)> = Vec::new();
    let mut frontier: Vec<Option<String>> = vec![None];
    for (level, &b) in config.branching.iter().enumerate() {
        let mut next = Vec::new();
        let mut k = 0;
        for parent in &frontier {
            for _ in 0..b {
                let name = format!("L{}_{k}", level + 1);
                k += 1;
                if let Some(p) = parent {
                    edges.push((name.clone(), p.clone()));
                }
                names.push(name.clone());
                next.push(Some(name));
            }
        }
        frontier = next;
    }
    let hierarchy = LabelHierarchy::from_edges(&edges, &names)?;
    let leaves: Vec<LabelId> = frontier
        .iter()
        .map(|n| hierarchy.id(n.as_deref().expect("leaf name")))
        .collect::<Result<_>>()?;

    let label_word = |l: LabelId, j: usize| format!("t{}_{j}", hierarchy.name(l).to_lowercase());
    let noise_word = |rng: &mut ChaCha8Rng| format!("w{}", rng.gen_range(0..config.noise_vocab));
    let n_leaves = leaves.len();
    let pick = |rng: &mut ChaCha8Rng, prefix: &str, own: Option<usize>, per_leaf: usize| {
        let leaf = match own {
            Some(l) if rng.gen::<f64>() < config.metadata_signal => l,
            _ => rng.gen_range(0..n_leaves),
        };
        format!("{prefix}{leaf}_{}", rng.gen_range(0..per_leaf))
    };

    let mut docs = Vec::with_capacity(config.docs);
    for i in 0..config.docs {
        let mut doc_leaves = vec![rng.gen_range(0..n_leaves)];
        if n_leaves > 1 && rng.gen::<f64>() < config.extra_leaf_prob {
            let mut other = rng.gen_range(0..n_leaves - 1);
            if other >= doc_leaves[0] {
                other += 1;
            }
            doc_leaves.push(other);
        }
        let mut labels: Vec<LabelId> = doc_leaves.iter().map(|&k| leaves[k]).collect();
        if config.ancestor_closure {
            for &k in &doc_leaves {
                labels.extend(hierarchy.ancestors(leaves[k])?);
            }
        }
        labels.sort_unstable();
        labels.dedup();

        let title: Vec<String> = labels
            .iter()
            .map(|&l| {
                if rng.gen::<f64>() < config.word_signal {
                    label_word(l, 0)
                } else {
                    noise_word(&mut rng)
                }
            })
            .collect();
        let body: Vec<String> = (0..config.doc_len)
            .map(|_| {
                if rng.gen::<f64>() < config.word_signal {
                    let l = *labels.choose(&mut rng).expect("non-empty label set");
                    label_word(l, rng.gen_range(0..config.words_per_label))
                } else {
                    noise_word(&mut rng)
                }
            })
            .collect();

        let main_leaf = doc_leaves[0];
        let venue = pick(&mut rng, "venue", Some(main_leaf), config.venues_per_leaf);
        let mut authors = Vec::new();
        for _ in 0..config.authors_per_doc {
            let own = *doc_leaves.choose(&mut rng).expect("leaf");
            let a = pick(&mut rng, "author", Some(own), config.authors_per_leaf);
            if !authors.contains(&a) {
                authors.push(a);
            }
        }
        let mut refs = Vec::new();
        for _ in 0..config.refs_per_doc {
            let own = *doc_leaves.choose(&mut rng).expect("leaf");
            let r = pick(&mut rng, "ref", Some(own), config.refs_per_leaf);
            if !refs.contains(&r) {
                refs.push(r);
            }
        }

        docs.push(RawDocument {
            id: format!("doc{i:06}"),
            text: vec![title, body],
            metadata: vec![vec![venue], authors, refs],
            labels: labels.iter().map(|&l| hierarchy.name(l).to_string()).collect(),
        });
    }
    Ok((docs, hierarchy))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{write_raw, Schema};

    fn small() -> SynthConfig {
        SynthConfig {
            docs: 60,
            branching: vec![2, 2],
            ..Default::default()
        }
    }

    #[test]
    fn builds_requested_tree() {
        let (_, h) = generate_synthetic(&SynthConfig::default(), 1).unwrap();
        assert_eq!(h.len(), 3 + 9 + 18);
        assert_eq!(h.roots().len(), 3);
        assert_eq!(h.edge_list().len(), 27);
    }

    #[test]
    fn zero_noise_places_signature_words() {
        let cfg = SynthConfig {
            word_signal: 1.0,
            metadata_signal: 1.0,
            extra_leaf_prob: 0.0,
            ..small()
        };
        let (docs, _) = generate_synthetic(&cfg, 3).unwrap();
        for d in &docs {
            let words: Vec<&str> = d.words().collect();
            for l in &d.labels {
                let sig = format!("t{}_0", l.to_lowercase());
                assert!(words.contains(&sig.as_str()), "{} lacks {sig}", d.id);
            }
        }
    }

    #[test]
    fn ancestor_closure_holds() {
        let (docs, h) = generate_synthetic(&small(), 4).unwrap();
        for d in &docs {
            for l in &d.labels {
                for a in h.ancestors(h.id(l).unwrap()).unwrap() {
                    assert!(d.labels.iter().any(|x| x == h.name(a)));
                }
            }
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let (a, _) = generate_synthetic(&small(), 9).unwrap();
        let (b, _) = generate_synthetic(&small(), 9).unwrap();
        let (pa, pb) = (dir.path().join("a"), dir.path().join("b"));
        write_raw(&pa, &a, &Schema::default()).unwrap();
        write_raw(&pb, &b, &Schema::default()).unwrap();
        assert_eq!(std::fs::read(pa).unwrap(), std::fs::read(pb).unwrap());
    }

    #[test]
    fn inconsistent_config_rejected() {
        for branching in [vec![], vec![3, 0]] {
            let cfg = SynthConfig {
                branching,
                ..Default::default()
            };
            assert!(matches!(generate_synthetic(&cfg, 0), Err(Error::Argument(_))));
        }
    }
}
