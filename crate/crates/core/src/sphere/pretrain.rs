use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::sampler::{PairSampler, Part, TrainingPair};
use super::space::{EmbeddingSpace, TableRef};
use super::{dot, margin_term, retract, riemannian_project};
use crate::corpus::{Document, Vocabulary};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainConfig {
    pub dim: usize,
    /// Margin γ.
    pub gamma: f64,
    /// Context window half-width x.
    pub window: usize,
    /// Initial step size α₀.
    pub lr: f64,
    /// α decays linearly to `lr * final_lr_fraction` over the run.
    pub final_lr_fraction: f64,
    pub epochs: usize,
    /// Round-robin iterations per epoch; each visits all four parts once.
    pub iterations_per_epoch: usize,
    pub negatives: usize,
    pub seed: u64,
    /// Step along `+∇R` instead of `−∇R`.
    pub literal_ascent: bool,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            dim: 100,
            gamma: 0.3,
            window: 5,
            lr: 0.05,
            final_lr_fraction: 0.1,
            epochs: 5,
            iterations_per_epoch: 10_000,
            negatives: 1,
            seed: 0,
            literal_ascent: false,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.gamma.is_nan() || self.gamma <= 0.0 {
            return Err(Error::Config(format!(
                "margin gamma must be > 0, got {}",
                self.gamma
            )));
        }
        if self.window < 1 {
            return Err(Error::Config("context window must be >= 1".into()));
        }
        if self.lr.is_nan() || self.lr <= 0.0 {
            return Err(Error::Config(format!(
                "initial step size must be > 0, got {}",
                self.lr
            )));
        }
        if !(self.final_lr_fraction > 0.0 && self.final_lr_fraction <= 1.0) {
            return Err(Error::Config("final_lr_fraction must be in (0, 1]".into()));
        }
        if self.dim == 0 || self.negatives == 0 {
            return Err(Error::Config("dimension and negatives must be positive".into()));
        }
        Ok(())
    }
}

/// Linear decay from `initial` to `initial * final_fraction` across `total_steps`.
#[derive(Clone, Copy, Debug)]
pub struct LearningRate {
    pub initial: f64,
    pub final_fraction: f64,
    pub total_steps: u64,
}

impl LearningRate {
    pub fn at(&self, step: u64) -> f64 {
        if self.total_steps <= 1 {
            return self.initial;
        }
        let progress = (step.min(self.total_steps - 1)) as f64 / (self.total_steps - 1) as f64;
        self.initial * (1.0 - (1.0 - self.final_fraction) * progress)
    }
}

/// Euclidean gradients of one hinge term with respect to its three vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct PairGradients {
    pub loss: f64,
    pub active: bool,
    pub anchor: Vec<f64>,
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
}

fn tables_for(pair: &TrainingPair) -> (TableRef, TableRef) {
    match pair.part {
        Part::DocMeta => (TableRef::Docs, TableRef::Metadata(pair.kind.unwrap_or(0))),
        Part::DocLabel => (TableRef::Docs, TableRef::Labels),
        Part::DocWord => (TableRef::Docs, TableRef::Words),
        Part::WordContext => (TableRef::Contexts, TableRef::Words),
    }
}

/// When the hinge is active: ∇anchor = neg − pos, ∇pos = −anchor,
/// ∇neg = anchor. Otherwise all three are zero.
pub fn euclidean_gradients(pair: &TrainingPair, gamma: f64, space: &EmbeddingSpace) -> Result<PairGradients> {
    let (anchor_t, item_t) = tables_for(pair);
    let (at, it) = (space.table(anchor_t), space.table(item_t));
    for (id, t) in [(pair.anchor, at), (pair.positive, it), (pair.negative, it)] {
        if id >= t.rows() {
            return Err(Error::Argument(format!("{:?} id {id} out of range", pair.part)));
        }
    }
    let (a, p, n) = (at.row(pair.anchor), it.row(pair.positive), it.row(pair.negative));
    let loss = margin_term(a, p, n, gamma)?;
    let active = gamma + dot(n, a) - dot(p, a) > 0.0;
    let dim = a.len();
    if !active {
        return Ok(PairGradients {
            loss,
            active,
            anchor: vec![0.0; dim],
            positive: vec![0.0; dim],
            negative: vec![0.0; dim],
        });
    }
    Ok(PairGradients {
        loss,
        active,
        anchor: n.iter().zip(p).map(|(x, y)| x - y).collect(),
        positive: a.iter().map(|v| -v).collect(),
        negative: a.to_vec(),
    })
}

/// Mean hinge loss per part, one entry per epoch.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PretrainLog {
    pub epoch_losses: Vec<[f64; 4]>,
    pub updates: u64,
    /// Largest unit-norm violation observed right after any retraction.
    pub max_norm_deviation: f64,
}

impl PretrainLog {
    pub fn epoch_total(&self, epoch: usize) -> f64 {
        self.epoch_losses[epoch].iter().sum()
    }
}

/// Stateful single-threaded trainer; deterministic given the seed.
pub struct Pretrainer<'a> {
    pub space: EmbeddingSpace,
    sampler: PairSampler<'a>,
    config: PretrainConfig,
    schedule: LearningRate,
    rng: ChaCha8Rng,
    step: u64,
    pub log: PretrainLog,
}

impl<'a> Pretrainer<'a> {
    pub fn new(docs: &'a [&'a Document], vocab: &Vocabulary, config: &PretrainConfig) -> Result<Self> {
        config.validate()?;
        let sampler = PairSampler::new(docs, vocab, config.window)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let space = EmbeddingSpace::random(docs.len(), vocab, config.dim, &mut rng);
        let parts = Part::ALL.iter().filter(|p| sampler.has_positives(**p)).count() as u64;
        let schedule = LearningRate {
            initial: config.lr,
            final_fraction: config.final_lr_fraction,
            total_steps: (config.epochs * config.iterations_per_epoch) as u64
                * parts
                * config.negatives as u64,
        };
        Ok(Self {
            space,
            sampler,
            config: config.clone(),
            schedule,
            rng,
            step: 0,
            log: PretrainLog::default(),
        })
    }

    pub fn sampler(&self) -> &PairSampler<'a> {
        &self.sampler
    }

    pub fn current_lr(&self) -> f64 {
        self.schedule.at(self.step)
    }

    /// One Riemannian step on a single pair. Returns the pre-update hinge value.
    pub fn update(&mut self, pair: &TrainingPair) -> Result<f64> {
        let grads = euclidean_gradients(pair, self.config.gamma, &self.space)?;
        let alpha = self.schedule.at(self.step);
        self.step += 1;
        self.log.updates += 1;
        if !grads.active {
            return Ok(grads.loss);
        }
        let (anchor_t, item_t) = tables_for(pair);
        let sign = if self.config.literal_ascent { 1.0 } else { -1.0 };
        let targets = [
            (anchor_t, pair.anchor, grads.anchor),
            (item_t, pair.positive, grads.positive),
            (item_t, pair.negative, grads.negative),
        ];
        // Gradients were all taken at the pre-update point; apply them afterwards.
        let mut updated = Vec::with_capacity(3);
        for (table, id, g) in targets {
            let e = self.space.table(table).row(id);
            let tangent = riemannian_project(e, &g)?;
            let direction: Vec<f64> = tangent.iter().map(|v| sign * v).collect();
            let mut step = alpha;
            let next = loop {
                match retract(e, &direction, step) {
                    Err(Error::DegenerateStep(_)) if step > 1e-12 => step *= 0.5,
                    other => break other?,
                }
            };
            updated.push((table, id, next));
        }
        for (table, id, next) in updated {
            let dev = (super::norm(&next) - 1.0).abs();
            self.log.max_norm_deviation = self.log.max_norm_deviation.max(dev);
            self.space.table_mut(table).row_mut(id).copy_from_slice(&next);
        }
        Ok(grads.loss)
    }

    /// One epoch of strict DM → DL → DW → WW round-robin iterations.
    pub fn run_epoch(&mut self) -> Result<[f64; 4]> {
        let mut sums = [0.0; 4];
        let mut counts = [0usize; 4];
        for _ in 0..self.config.iterations_per_epoch {
            for (k, part) in Part::ALL.into_iter().enumerate() {
                if !self.sampler.has_positives(part) {
                    continue;
                }
                for _ in 0..self.config.negatives {
                    let pair = self.sampler.sample(part, &mut self.rng)?;
                    sums[k] += self.update(&pair)?;
                    counts[k] += 1;
                }
            }
        }
        let mut means = [0.0; 4];
        for k in 0..4 {
            if counts[k] > 0 {
                means[k] = sums[k] / counts[k] as f64;
            }
        }
        self.log.epoch_losses.push(means);
        log::info!(
            "pretrain epoch {}: DM {:.4} DL {:.4} DW {:.4} WW {:.4} (lr {:.5})",
            self.log.epoch_losses.len(),
            means[0],
            means[1],
            means[2],
            means[3],
            self.current_lr()
        );
        Ok(means)
    }
}

/// Trains an [`EmbeddingSpace`] on `docs` (the training split).
pub fn pretrain(
    docs: &[&Document],
    vocab: &Vocabulary,
    config: &PretrainConfig,
) -> Result<(EmbeddingSpace, PretrainLog)> {
    let mut trainer = Pretrainer::new(docs, vocab, config)?;
    for _ in 0..config.epochs {
        trainer.run_epoch()?;
    }
    Ok((trainer.space, trainer.log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    fn space_2d(anchor: [f64; 2], pos: [f64; 2], neg: [f64; 2]) -> EmbeddingSpace {
        EmbeddingSpace {
            dim: 2,
            docs: Tensor::new(1, 2, anchor.to_vec()).unwrap(),
            metadata: vec![],
            labels: Tensor::new(2, 2, [pos, neg].concat()).unwrap(),
            words: Tensor::zeros(0, 2),
            contexts: Tensor::zeros(0, 2),
        }
    }

    fn dl_pair() -> TrainingPair {
        TrainingPair {
            part: Part::DocLabel,
            anchor: 0,
            positive: 0,
            negative: 1,
            kind: None,
        }
    }

    #[test]
    fn active_hinge_gradients() {
        let s = space_2d([0.6, 0.8], [1.0, 0.0], [0.0, 1.0]);
        let g = euclidean_gradients(&dl_pair(), 0.3, &s).unwrap();
        assert!(g.active);
        assert_eq!(g.anchor, vec![-1.0, 1.0]);
        assert_eq!(g.positive, vec![-0.6, -0.8]);
        assert_eq!(g.negative, vec![0.6, 0.8]);
    }

    #[test]
    fn inactive_hinge_gradients_are_zero() {
        let s = space_2d([1.0, 0.0], [1.0, 0.0], [-1.0, 0.0]);
        let g = euclidean_gradients(&dl_pair(), 0.3, &s).unwrap();
        assert!(!g.active);
        assert_eq!(g.loss, 0.0);
        assert!(g
            .anchor
            .iter()
            .chain(&g.positive)
            .chain(&g.negative)
            .all(|&v| v == 0.0));
    }

    #[test]
    fn schedule_is_monotone_and_bounded() {
        let lr = LearningRate {
            initial: 0.1,
            final_fraction: 0.1,
            total_steps: 1000,
        };
        let mut prev = f64::INFINITY;
        for t in 0..1200 {
            let a = lr.at(t);
            assert!(a <= prev);
            prev = a;
        }
        assert!((lr.at(0) - 0.1).abs() < 1e-15);
        assert!((lr.at(999) - 0.01).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        let bad = PretrainConfig {
            gamma: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = PretrainConfig {
            window: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(PretrainConfig::default().validate().is_ok());
    }
}
