use rand::Rng;

use crate::corpus::{Document, Vocabulary, UNK_ID};
use crate::error::{Error, Result};
use crate::taxonomy::LabelId;

/// The four proximity objectives.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Part {
    DocMeta,
    DocLabel,
    DocWord,
    WordContext,
}

impl Part {
    pub const ALL: [Part; 4] = [Part::DocMeta, Part::DocLabel, Part::DocWord, Part::WordContext];

    pub fn name(self) -> &'static str {
        match self {
            Part::DocMeta => "DM",
            Part::DocLabel => "DL",
            Part::DocWord => "DW",
            Part::WordContext => "WW",
        }
    }
}

/// One positive and one negative sharing an anchor.
///
/// For `DocMeta`, `DocLabel`, and `DocWord` the anchor is a document index.
/// For `WordContext` it is the context word (scored through its context
/// vector) and positive/negative are center words.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TrainingPair {
    pub part: Part,
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
    /// Metadata type, for `DocMeta` only.
    pub kind: Option<u16>,
}

/// Positions `{i + j : −x ≤ j ≤ x, j ≠ 0}` that fall inside a sequence of `len`.
pub fn context_window(len: usize, center: usize, window: usize) -> Vec<usize> {
    let lo = center.saturating_sub(window);
    let hi = (center + window).min(len.saturating_sub(1));
    (lo..=hi).filter(|&p| p != center && p < len).collect()
}

/// Uniform draw from `start..end` minus `excluded` (which must lie in range).
pub fn sample_excluding<R: Rng + ?Sized>(
    start: usize,
    end: usize,
    excluded: usize,
    rng: &mut R,
) -> Result<usize> {
    if end <= start + 1 {
        return Err(Error::Sampling(format!(
            "no negative candidate: range {start}..{end} holds at most the positive"
        )));
    }
    let r = rng.gen_range(start..end - 1);
    Ok(if r >= excluded { r + 1 } else { r })
}

/// Uniform irrelevant label: anything in `0..num_labels` not in `relevant`
/// (sorted).
pub fn sample_label_negative<R: Rng + ?Sized>(
    relevant: &[LabelId],
    num_labels: usize,
    rng: &mut R,
) -> Result<LabelId> {
    if relevant.len() >= num_labels {
        return Err(Error::Sampling(
            "document carries every label; no negative label exists".into(),
        ));
    }
    // Index into the complement, then skip over the relevant ids.
    let mut r = rng.gen_range(0..(num_labels - relevant.len()) as LabelId);
    for &l in relevant {
        if l <= r {
            r += 1;
        } else {
            break;
        }
    }
    Ok(r)
}

/// Precomputed positive relations of a training set.
#[derive(Debug)]
pub struct PairSampler<'a> {
    docs: &'a [&'a Document],
    doc_meta: Vec<(u32, u16, u32)>,
    doc_label: Vec<(u32, LabelId)>,
    doc_word: Vec<(u32, u32)>,
    word_context: Vec<(u32, u32)>,
    meta_sizes: Vec<usize>,
    num_labels: usize,
    num_words: usize,
    window: usize,
}

impl<'a> PairSampler<'a> {
    /// Fails with a configuration error if any objective would have an empty
    /// positive or negative candidate set.
    pub fn new(docs: &'a [&'a Document], vocab: &Vocabulary, window: usize) -> Result<Self> {
        if window == 0 {
            return Err(Error::Config("context window must be at least 1".into()));
        }
        let meta_sizes: Vec<usize> = vocab.metadata.iter().map(|(_, t)| t.len()).collect();
        let mut s = Self {
            docs,
            doc_meta: Vec::new(),
            doc_label: Vec::new(),
            doc_word: Vec::new(),
            word_context: Vec::new(),
            meta_sizes,
            num_labels: vocab.labels.len(),
            num_words: vocab.words.len(),
            window,
        };
        for (di, d) in docs.iter().enumerate() {
            let di = di as u32;
            for m in &d.metadata {
                if m.id != UNK_ID {
                    s.doc_meta.push((di, m.kind, m.id));
                }
            }
            for &l in &d.labels {
                s.doc_label.push((di, l));
            }
            if d.labels.len() >= s.num_labels {
                return Err(Error::Config(format!(
                    "document '{}' carries every label; the document-label objective has no negatives",
                    d.id
                )));
            }
            for (p, &w) in d.words.iter().enumerate() {
                if w == UNK_ID {
                    continue;
                }
                s.doc_word.push((di, p as u32));
                let has_context = context_window(d.words.len(), p, window)
                    .into_iter()
                    .any(|c| d.words[c] != UNK_ID);
                if has_context {
                    s.word_context.push((di, p as u32));
                }
            }
        }
        for &(_, kind, _) in &s.doc_meta {
            // Candidates exclude UNK (id 0) and the positive.
            if s.meta_sizes[kind as usize] < 3 {
                return Err(Error::Config(format!(
                    "metadata type '{}' has a single instance; no negatives exist",
                    vocab.metadata[kind as usize].0
                )));
            }
        }
        if !s.doc_word.is_empty() && s.num_words < 3 {
            return Err(Error::Config(
                "word vocabulary has a single word; no negatives exist".into(),
            ));
        }
        if s.doc_label.is_empty() {
            return Err(Error::Config("training documents carry no labels".into()));
        }
        Ok(s)
    }

    /// Whether `part` has any positives to draw.
    pub fn has_positives(&self, part: Part) -> bool {
        match part {
            Part::DocMeta => !self.doc_meta.is_empty(),
            Part::DocLabel => !self.doc_label.is_empty(),
            Part::DocWord => !self.doc_word.is_empty(),
            Part::WordContext => !self.word_context.is_empty(),
        }
    }

    pub fn num_docs(&self) -> usize {
        self.docs.len()
    }

    /// Draws a positive relation uniformly, then a uniform negative from its
    /// complement set.
    pub fn sample<R: Rng + ?Sized>(&self, part: Part, rng: &mut R) -> Result<TrainingPair> {
        if !self.has_positives(part) {
            return Err(Error::Sampling(format!("no positive pairs for {}", part.name())));
        }
        match part {
            Part::DocMeta => {
                let (d, kind, m) = self.doc_meta[rng.gen_range(0..self.doc_meta.len())];
                let neg = sample_excluding(1, self.meta_sizes[kind as usize], m as usize, rng)?;
                Ok(TrainingPair {
                    part,
                    anchor: d as usize,
                    positive: m as usize,
                    negative: neg,
                    kind: Some(kind),
                })
            }
            Part::DocLabel => {
                let (d, l) = self.doc_label[rng.gen_range(0..self.doc_label.len())];
                let neg = sample_label_negative(&self.docs[d as usize].labels, self.num_labels, rng)?;
                Ok(TrainingPair {
                    part,
                    anchor: d as usize,
                    positive: l as usize,
                    negative: neg as usize,
                    kind: None,
                })
            }
            Part::DocWord => {
                let (d, p) = self.doc_word[rng.gen_range(0..self.doc_word.len())];
                let w = self.docs[d as usize].words[p as usize] as usize;
                let neg = sample_excluding(1, self.num_words, w, rng)?;
                Ok(TrainingPair {
                    part,
                    anchor: d as usize,
                    positive: w,
                    negative: neg,
                    kind: None,
                })
            }
            Part::WordContext => {
                let (d, p) = self.word_context[rng.gen_range(0..self.word_context.len())];
                let words = &self.docs[d as usize].words;
                let contexts: Vec<usize> = context_window(words.len(), p as usize, self.window)
                    .into_iter()
                    .filter(|&c| words[c] != UNK_ID)
                    .collect();
                let ctx = words[contexts[rng.gen_range(0..contexts.len())]] as usize;
                let center = words[p as usize] as usize;
                let neg = sample_excluding(1, self.num_words, center, rng)?;
                Ok(TrainingPair {
                    part,
                    anchor: ctx,
                    positive: center,
                    negative: neg,
                    kind: None,
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn window_membership() {
        // W_d = [w1..w5], x = 2, center w3 (index 2)
        assert_eq!(context_window(5, 2, 2), vec![0, 1, 3, 4]);
        assert_eq!(context_window(5, 0, 2), vec![1, 2]);
        assert_eq!(context_window(5, 4, 1), vec![3]);
        assert!(context_window(1, 0, 3).is_empty());
    }

    #[test]
    fn full_label_set_has_no_negative() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            sample_label_negative(&[0, 1, 2], 3, &mut rng),
            Err(Error::Sampling(_))
        ));
    }

    #[test]
    fn label_negatives_avoid_relevant() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let relevant = [1, 4, 5];
        let mut seen = [0usize; 8];
        for _ in 0..4000 {
            let l = sample_label_negative(&relevant, 8, &mut rng).unwrap();
            assert!(!relevant.contains(&l));
            seen[l as usize] += 1;
        }
        for l in [0, 2, 3, 6, 7] {
            assert!(seen[l] > 600, "{seen:?}");
        }
    }

    #[test]
    fn single_candidate_range_fails() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_excluding(1, 2, 1, &mut rng).is_err());
        for _ in 0..100 {
            let v = sample_excluding(1, 4, 2, &mut rng).unwrap();
            assert!(v == 1 || v == 3);
        }
    }
}
