//! End-to-end runs: data preparation, pre-training, training, evaluation.

use log::info;
use sha2::{Digest, Sha256};

use crate::classifier::{train_classifier, MatchModel, TrainOutcome};
use crate::config::RunConfig;
use crate::corpus::{
    generate_synthetic, read_raw, split_corpus, Corpus, CorpusSplit, Document, Partition, Schema,
    SynthConfig, Vocabulary,
};
use crate::error::{Error, Result};
use crate::metrics::{inversion_rate, DocumentScores, EvalReport};
use crate::sphere::{pretrain, EmbeddingSpace, PretrainLog};
use crate::taxonomy::LabelHierarchy;

/// A resolved corpus with its hierarchy and split.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub corpus: Corpus,
    pub hierarchy: LabelHierarchy,
    pub split: CorpusSplit,
}

impl Dataset {
    pub fn synthetic(
        synth: &SynthConfig,
        seed: u64,
        ratios: (f64, f64, f64),
        split_seed: u64,
    ) -> Result<Self> {
        let (raw, hierarchy) = generate_synthetic(synth, seed)?;
        let vocab = Vocabulary::build(&raw, &Schema::default(), 1, Some(&hierarchy))?;
        let corpus = Corpus::resolve(&raw, vocab, Some(&hierarchy))?;
        let ids: Vec<String> = corpus.docs.iter().map(|d| d.id.clone()).collect();
        let split = split_corpus(&ids, ratios, split_seed)?;
        Ok(Self {
            corpus,
            hierarchy,
            split,
        })
    }

    /// Reads the corpus and hierarchy named in `config`; the split comes
    /// from `config.split` when set, otherwise from the ratios.
    pub fn load(config: &RunConfig) -> Result<Self> {
        Self::load_with_vocab(config, None)
    }

    /// As [`Dataset::load`], resolving against `vocab` (e.g. a checkpoint's)
    /// instead of building a vocabulary from the corpus.
    pub fn load_with_vocab(config: &RunConfig, vocab: Option<Vocabulary>) -> Result<Self> {
        let corpus_path = config
            .corpus
            .as_ref()
            .ok_or_else(|| Error::Config("no corpus path configured (key 'corpus')".into()))?;
        let hierarchy_path = config
            .hierarchy
            .as_ref()
            .ok_or_else(|| Error::Config("no hierarchy path configured (key 'hierarchy')".into()))?;
        let mut hierarchy = LabelHierarchy::load(hierarchy_path)?;
        if let Some(label) = &config.remove_label {
            hierarchy = hierarchy.without_label(label)?;
        }
        let schema = Schema::default();
        let raw = read_raw(corpus_path, &schema)?;
        let vocab = match vocab {
            Some(v) => v,
            None => Vocabulary::build(&raw, &schema, config.min_count, Some(&hierarchy))?,
        };
        let corpus = Corpus::resolve(&raw, vocab, Some(&hierarchy))?;
        let split = match &config.split {
            Some(p) => CorpusSplit::load(p)?,
            None => {
                let ids: Vec<String> = corpus.docs.iter().map(|d| d.id.clone()).collect();
                split_corpus(&ids, config.ratios, config.split_seed)?
            }
        };
        Ok(Self {
            corpus,
            hierarchy,
            split,
        })
    }

    pub fn docs(&self, part: Partition) -> Result<Vec<&Document>> {
        self.corpus.select(self.split.ids(part))
    }
}

/// Short hex digest of the configuration text.
pub fn fingerprint(config: &RunConfig) -> String {
    let digest = Sha256::digest(config.to_text().as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Pre-trains on the training split.
pub fn run_pretraining(data: &Dataset, config: &RunConfig) -> Result<(EmbeddingSpace, PretrainLog)> {
    let train = data.docs(Partition::Train)?;
    let mut pcfg = config.pretrain.clone();
    pcfg.seed = config.seed;
    let (space, log) = pretrain(&train, &data.corpus.vocab, &pcfg)?;
    info!(
        "pre-training done: {} updates, max norm deviation {:e}",
        log.updates, log.max_norm_deviation
    );
    Ok((space, log))
}

pub fn build_model(data: &Dataset, config: &RunConfig, space: Option<&EmbeddingSpace>) -> Result<MatchModel> {
    MatchModel::new(
        &data.corpus.vocab,
        data.hierarchy.edge_list(),
        &config.encoder,
        space,
        config.train.head_from_labels,
        config.seed,
    )
}

#[derive(Debug)]
pub struct RunSummary {
    pub outcome: TrainOutcome,
    pub test: EvalReport,
    pub test_per_document: Vec<DocumentScores>,
    pub validation_inversion: f64,
    pub mean_edge_distance: f64,
}

/// Trains from `space` (or random initialization) and evaluates on the
/// test split.
pub fn run_experiment(
    data: &Dataset,
    config: &RunConfig,
    space: Option<&EmbeddingSpace>,
) -> Result<RunSummary> {
    config.validate()?;
    let train = data.docs(Partition::Train)?;
    let validation = data.docs(Partition::Validation)?;
    let test = data.docs(Partition::Test)?;
    let mut tcfg = config.train.clone();
    tcfg.seed = config.seed;
    let model = build_model(data, config, space)?;
    let outcome = train_classifier(model, &train, &validation, &tcfg)?;
    let (test_report, test_per_document) = outcome.model.evaluate(&test, &fingerprint(config))?;
    let validation_probs = outcome.model.predict(&validation)?;
    let validation_inversion = if data.hierarchy.edge_list().is_empty() {
        0.0
    } else {
        inversion_rate(&validation_probs, data.hierarchy.edge_list())?
    };
    let mean_edge_distance = if data.hierarchy.edge_list().is_empty() {
        0.0
    } else {
        outcome.model.mean_edge_distance()?
    };
    Ok(RunSummary {
        outcome,
        test: test_report,
        test_per_document,
        validation_inversion,
        mean_edge_distance,
    })
}
