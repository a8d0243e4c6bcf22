//! Sigmoid prediction layer, training objective, and training loop.
//!
//! The objective is `J = BCE + λ1·J_param + λ2·J_output` where
//! `J_param = Σ_(l,l') ½‖w_l − w_l'‖²` over hierarchy edges and
//! `J_output = Σ_d Σ_(l,l') max(0, π_dl − π_dl')`. BCE and `J_output` are
//! averaged over the batch.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use log::info;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Adam, Graph, ParamId, ParamSet, Tensor, Var};
use crate::corpus::{Document, Vocabulary};
use crate::encoder::{Encoder, EncoderConfig, Mode};
use crate::error::{Error, Result};
use crate::metrics::{DocumentScores, EvalReport};
use crate::sphere::EmbeddingSpace;
use crate::taxonomy::LabelId;

pub const DEFAULT_CLAMP: f64 = 1e-7;
const EVAL_CHUNK: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub clamp: f64,
    /// Epochs without validation NDCG@3 improvement before stopping; 0 disables.
    pub patience: usize,
    /// Initialize label weight vectors from pre-trained label embeddings.
    pub head_from_labels: bool,
    /// Batches averaged into each epoch's reported training loss.
    pub loss_window: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda1: 1e-3,
            lambda2: 1e-2,
            lr: 1e-3,
            batch_size: 256,
            epochs: 20,
            seed: 0,
            clamp: DEFAULT_CLAMP,
            patience: 3,
            head_from_labels: false,
            loss_window: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return Err(Error::Config("lambda1 and lambda2 must be >= 0".into()));
        }
        if !(self.clamp > 0.0 && self.clamp < 0.5) {
            return Err(Error::Config(format!(
                "clamp must be in (0, 0.5), got {}",
                self.clamp
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.loss_window == 0 {
            return Err(Error::Config(
                "batch_size, epochs and loss_window must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// `σ(rep · W + b)` for a `B x D` batch of representations.
pub fn predict_probabilities(rep: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    if rep.cols() != weights.rows() {
        return Err(Error::Dimension {
            expected: weights.rows(),
            actual: rep.cols(),
        });
    }
    if bias.shape() != (1, weights.cols()) {
        return Err(Error::Shape {
            op: "predict_probabilities",
            left: bias.shape(),
            right: (1, weights.cols()),
        });
    }
    let mut logits = rep.matmul(weights)?;
    for r in 0..logits.rows() {
        for (v, b) in logits.row_mut(r).iter_mut().zip(bias.data()) {
            *v = crate::autodiff::sigmoid(*v + b);
        }
    }
    Ok(logits)
}

/// Batch-mean binary cross-entropy with probabilities clamped to `[ε, 1−ε]`.
pub fn bce_loss(probabilities: &Tensor, targets: &Tensor, clamp: f64) -> Result<f64> {
    probabilities.check_same_shape(targets, "bce_loss")?;
    let mut total = 0.0;
    for (&p, &y) in probabilities.data().iter().zip(targets.data()) {
        let p = p.clamp(clamp, 1.0 - clamp);
        total -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
    }
    Ok(total / probabilities.rows() as f64)
}

fn check_edges(edges: &[(LabelId, LabelId)], num_labels: usize) -> Result<()> {
    for &(c, p) in edges {
        if c as usize >= num_labels || p as usize >= num_labels {
            return Err(Error::UnknownLabel(format!(
                "edge ({c}, {p}) outside {num_labels} labels"
            )));
        }
    }
    Ok(())
}

/// `Σ ½‖w_child − w_parent‖²`; column `l` of `weights` is `w_l`.
pub fn parameter_regularizer(weights: &Tensor, edges: &[(LabelId, LabelId)]) -> Result<f64> {
    check_edges(edges, weights.cols())?;
    let mut total = 0.0;
    for &(c, p) in edges {
        for r in 0..weights.rows() {
            let d = weights.get(r, c as usize) - weights.get(r, p as usize);
            total += 0.5 * d * d;
        }
    }
    Ok(total)
}

/// Batch mean of `Σ max(0, π_child − π_parent)`.
pub fn output_regularizer(probabilities: &Tensor, edges: &[(LabelId, LabelId)]) -> Result<f64> {
    check_edges(edges, probabilities.cols())?;
    let mut total = 0.0;
    for r in 0..probabilities.rows() {
        let row = probabilities.row(r);
        for &(c, p) in edges {
            total += (row[c as usize] - row[p as usize]).max(0.0);
        }
    }
    Ok(total / probabilities.rows() as f64)
}

/// Ids of the `k` largest probabilities, descending, ties to the smaller id.
pub fn top_k_labels(probabilities: &[f64], k: usize) -> Vec<LabelId> {
    let mut ids: Vec<LabelId> = (0..probabilities.len() as LabelId).collect();
    ids.sort_by(|&a, &b| {
        probabilities[b as usize]
            .total_cmp(&probabilities[a as usize])
            .then(a.cmp(&b))
    });
    ids.truncate(k);
    ids
}

/// Multi-hot label matrix for a batch.
pub fn label_matrix(docs: &[&Document], num_labels: usize) -> Result<Tensor> {
    let mut y = Tensor::zeros(docs.len(), num_labels);
    for (r, d) in docs.iter().enumerate() {
        for &l in &d.labels {
            if l as usize >= num_labels {
                return Err(Error::UnknownLabel(format!("#{l} in document '{}'", d.id)));
            }
            y.set(r, l as usize, 1.0);
        }
    }
    Ok(y)
}

/// Batch-mean BCE from logits. Clamping the logit to
/// `[logit(ε), logit(1−ε)]` equals clamping the probability to `[ε, 1−ε]`;
/// working in log-sigmoid form avoids the cancellation in `ln(1 − π)`.
pub fn bce_term(g: &mut Graph, logits: Var, targets: Tensor, clamp: f64) -> Result<Var> {
    g.value(logits).check_same_shape(&targets, "bce_term")?;
    let batch = g.value(logits).rows() as f64;
    let bound = ((1.0 - clamp) / clamp).ln();
    let z = g.clamp(logits, -bound, bound)?;
    let negated: Vec<f64> = targets.data().iter().map(|y| 1.0 - y).collect();
    let not_y = g.constant(Tensor::new(targets.rows(), targets.cols(), negated)?)?;
    let y = g.constant(targets)?;
    let log_p = g.log_sigmoid(z)?;
    let minus_z = g.scale(z, -1.0)?;
    let log_q = g.log_sigmoid(minus_z)?;
    let pos = g.mul(y, log_p)?;
    let neg = g.mul(not_y, log_q)?;
    let both = g.add(pos, neg)?;
    let s = g.sum(both)?;
    g.scale(s, -1.0 / batch)
}

fn edge_columns(edges: &[(LabelId, LabelId)]) -> (Vec<usize>, Vec<usize>) {
    edges.iter().map(|&(c, p)| (c as usize, p as usize)).unzip()
}

pub fn parameter_term(g: &mut Graph, weights: Var, edges: &[(LabelId, LabelId)]) -> Result<Var> {
    check_edges(edges, g.value(weights).cols())?;
    if edges.is_empty() {
        return g.constant(Tensor::scalar(0.0));
    }
    let (children, parents) = edge_columns(edges);
    let c = g.gather_cols(weights, &children)?;
    let p = g.gather_cols(weights, &parents)?;
    let d = g.sub(c, p)?;
    let sq = g.mul(d, d)?;
    let s = g.sum(sq)?;
    g.scale(s, 0.5)
}

pub fn output_term(g: &mut Graph, probabilities: Var, edges: &[(LabelId, LabelId)]) -> Result<Var> {
    check_edges(edges, g.value(probabilities).cols())?;
    if edges.is_empty() {
        return g.constant(Tensor::scalar(0.0));
    }
    let batch = g.value(probabilities).rows() as f64;
    let (children, parents) = edge_columns(edges);
    let c = g.gather_cols(probabilities, &children)?;
    let p = g.gather_cols(probabilities, &parents)?;
    let d = g.sub(c, p)?;
    let hinge = g.relu(d)?;
    let s = g.sum(hinge)?;
    g.scale(s, 1.0 / batch)
}

/// Objective node plus the value of each component.
#[derive(Clone, Copy, Debug)]
pub struct Objective {
    pub total: Var,
    pub bce: f64,
    pub parameter: f64,
    pub output: f64,
}

/// Label weights `W` (`C·δ x |L|`) and bias `b` (`1 x |L|`).
#[derive(Clone, Copy, Debug)]
pub struct PredictionHead {
    pub weights: ParamId,
    pub bias: ParamId,
}

impl PredictionHead {
    pub fn init<R: Rng + ?Sized>(
        params: &mut ParamSet,
        input_dim: usize,
        num_labels: usize,
        rng: &mut R,
    ) -> Self {
        let bound = (6.0 / (input_dim + num_labels) as f64).sqrt();
        let data = (0..input_dim * num_labels)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        let weights = params.insert(
            "head.weights",
            Tensor::new(input_dim, num_labels, data).expect("sized"),
        );
        let bias = params.insert("head.bias", Tensor::zeros(1, num_labels));
        Self { weights, bias }
    }

    /// `w_l` is the label embedding `e_l` repeated once per `[CLS]` slot.
    pub fn init_from_labels(params: &mut ParamSet, labels: &Tensor, cls_tokens: usize) -> Self {
        let dim = labels.cols();
        let mut w = Tensor::zeros(cls_tokens * dim, labels.rows());
        for l in 0..labels.rows() {
            for c in 0..cls_tokens {
                for j in 0..dim {
                    w.set(c * dim + j, l, labels.get(l, j));
                }
            }
        }
        let weights = params.insert("head.weights", w);
        let bias = params.insert("head.bias", Tensor::zeros(1, labels.rows()));
        Self { weights, bias }
    }
}

/// Encoder plus prediction head, sharing one parameter set.
#[derive(Clone, Debug)]
pub struct MatchModel {
    pub params: ParamSet,
    pub encoder: Encoder,
    pub head: PredictionHead,
    pub num_labels: usize,
    /// `(child, parent)` hierarchy edges.
    pub edges: Vec<(LabelId, LabelId)>,
}

impl MatchModel {
    /// Fresh model. Embedding tables (and optionally the head) start from
    /// `space` when given, otherwise from random unit vectors.
    pub fn new(
        vocab: &Vocabulary,
        edges: &[(LabelId, LabelId)],
        config: &EncoderConfig,
        space: Option<&EmbeddingSpace>,
        head_from_labels: bool,
        seed: u64,
    ) -> Result<Self> {
        let num_labels = vocab.labels.len();
        check_edges(edges, num_labels)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let encoder = Encoder::init(&mut params, config, vocab, space, &mut rng)?;
        let head = match (space, head_from_labels) {
            (Some(s), true) => {
                if s.labels.rows() != num_labels {
                    return Err(Error::Config(
                        "pre-trained label table does not match the label set".into(),
                    ));
                }
                PredictionHead::init_from_labels(&mut params, &s.labels, config.cls_tokens)
            }
            (None, true) => {
                return Err(Error::Config(
                    "head_from_labels needs pre-trained embeddings".into(),
                ));
            }
            _ => PredictionHead::init(&mut params, config.output_dim(), num_labels, &mut rng),
        };
        Ok(Self {
            params,
            encoder,
            head,
            num_labels,
            edges: edges.to_vec(),
        })
    }

    /// Batch probabilities `B x |L|` as a graph node.
    pub fn forward(&self, g: &mut Graph, docs: &[&Document], mode: &mut Mode) -> Result<Var> {
        let logits = self.logits_with(g, &self.params, docs, mode)?;
        g.sigmoid(logits)
    }

    /// Pre-sigmoid scores `ĥ W + b` over an external parameter set with the
    /// same layout (used for finite-difference checks).
    pub fn logits_with(
        &self,
        g: &mut Graph,
        params: &ParamSet,
        docs: &[&Document],
        mode: &mut Mode,
    ) -> Result<Var> {
        if docs.is_empty() {
            return Err(Error::Argument("empty batch".into()));
        }
        let mut reps = Vec::with_capacity(docs.len());
        for d in docs {
            reps.push(self.encoder.encode_document(g, params, d, mode)?);
        }
        let rep = if reps.len() == 1 {
            reps[0]
        } else {
            g.concat_rows(&reps)?
        };
        let w = g.param(params, self.head.weights)?;
        let b = g.param(params, self.head.bias)?;
        let logits = g.matmul(rep, w)?;
        g.add_row(logits, b)
    }

    pub fn objective(
        &self,
        g: &mut Graph,
        docs: &[&Document],
        config: &TrainConfig,
        mode: &mut Mode,
    ) -> Result<Objective> {
        self.objective_with(g, &self.params, docs, config, mode)
    }

    pub fn objective_with(
        &self,
        g: &mut Graph,
        params: &ParamSet,
        docs: &[&Document],
        config: &TrainConfig,
        mode: &mut Mode,
    ) -> Result<Objective> {
        let logits = self.logits_with(g, params, docs, mode)?;
        let probs = g.sigmoid(logits)?;
        let y = label_matrix(docs, self.num_labels)?;
        let bce = bce_term(g, logits, y, config.clamp)?;
        let w = g.param(params, self.head.weights)?;
        let param = parameter_term(g, w, &self.edges)?;
        let output = output_term(g, probs, &self.edges)?;
        let weighted_param = g.scale(param, config.lambda1)?;
        let weighted_output = g.scale(output, config.lambda2)?;
        let total = g.add(bce, weighted_param)?;
        let total = g.add(total, weighted_output)?;
        Ok(Objective {
            total,
            bce: g.value(bce).item()?,
            parameter: g.value(param).item()?,
            output: g.value(output).item()?,
        })
    }

    /// Evaluation-mode probabilities, one row per document.
    pub fn predict(&self, docs: &[&Document]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(docs.len());
        for chunk in docs.chunks(EVAL_CHUNK) {
            let mut g = Graph::new();
            let probs = self.forward(&mut g, chunk, &mut Mode::Eval)?;
            let t = g.value(probs);
            out.extend((0..t.rows()).map(|r| t.row(r).to_vec()));
        }
        Ok(out)
    }

    /// P@k / NDCG@k over `docs` plus per-document scores.
    pub fn evaluate(
        &self,
        docs: &[&Document],
        fingerprint: &str,
    ) -> Result<(EvalReport, Vec<DocumentScores>)> {
        if docs.is_empty() {
            return Err(Error::Argument("cannot evaluate an empty split".into()));
        }
        let probs = self.predict(docs)?;
        let rankings: Vec<Vec<LabelId>> = probs.iter().map(|p| top_k_labels(p, 5)).collect();
        EvalReport::from_rankings(
            docs.iter()
                .zip(&rankings)
                .map(|(d, r)| (d.id.as_str(), d.labels.as_slice(), r.as_slice())),
            fingerprint,
        )
    }

    /// Mean `‖w_child − w_parent‖` over hierarchy edges.
    pub fn mean_edge_distance(&self) -> Result<f64> {
        if self.edges.is_empty() {
            return Err(Error::Argument("hierarchy has no edges".into()));
        }
        let w = self.params.get(self.head.weights);
        let total: f64 = self
            .edges
            .iter()
            .map(|&(c, p)| {
                (0..w.rows())
                    .map(|r| (w.get(r, c as usize) - w.get(r, p as usize)).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .sum();
        Ok(total / self.edges.len() as f64)
    }

    /// Writes `model.params` and `model.cfg` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        self.params.save(&dir.join("model.params"))?;
        let c = &self.encoder.config;
        let mut cfg = format!(
            "layers={}\nheads={}\ncls_tokens={}\ndim={}\nffn_dim={}\ndropout={}\nmax_len={}\nmasked_metadata={}\ndrop_all_metadata={}\nnum_labels={}\n",
            c.layers,
            c.heads,
            c.cls_tokens,
            c.dim,
            c.ffn_dim,
            c.dropout,
            c.max_len,
            c.masked_metadata.join(","),
            c.drop_all_metadata,
            self.num_labels
        );
        let edges: Vec<String> = self.edges.iter().map(|(c, p)| format!("{c}:{p}")).collect();
        cfg.push_str(&format!("edges={}\n", edges.join(",")));
        let path = dir.join("model.cfg");
        fs::write(&path, cfg).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(dir: &Path, vocab: &Vocabulary) -> Result<Self> {
        let cfg_path = dir.join("model.cfg");
        let text = fs::read_to_string(&cfg_path)
            .map_err(|e| Error::io(format!("reading {}", cfg_path.display()), e))?;
        let mut kv = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: cfg_path.clone(),
                line: i + 1,
                message: "expected key=value".into(),
            })?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| -> Result<&str> {
            kv.get(k)
                .map(String::as_str)
                .ok_or_else(|| Error::Config(format!("{} lacks '{k}'", cfg_path.display())))
        };
        let num = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| Error::Config(format!("'{k}' in {} is not an integer", cfg_path.display())))
        };
        let list = |s: &str| -> Vec<String> {
            s.split(',')
                .filter(|x| !x.is_empty())
                .map(str::to_string)
                .collect()
        };
        let config = EncoderConfig {
            layers: num("layers")?,
            heads: num("heads")?,
            cls_tokens: num("cls_tokens")?,
            dim: num("dim")?,
            ffn_dim: num("ffn_dim")?,
            dropout: get("dropout")?
                .parse()
                .map_err(|_| Error::Config("bad dropout in model.cfg".into()))?,
            max_len: num("max_len")?,
            masked_metadata: list(get("masked_metadata")?),
            drop_all_metadata: get("drop_all_metadata")? == "true",
        };
        let num_labels = num("num_labels")?;
        if num_labels != vocab.labels.len() {
            return Err(Error::Config(format!(
                "checkpoint has {num_labels} labels, vocabulary has {}",
                vocab.labels.len()
            )));
        }
        let edges = list(get("edges")?)
            .iter()
            .map(|e| {
                let (c, p) = e
                    .split_once(':')
                    .ok_or_else(|| Error::Config(format!("bad edge '{e}' in model.cfg")))?;
                let parse = |s: &str| {
                    s.parse::<LabelId>()
                        .map_err(|_| Error::Config(format!("bad edge '{e}'")))
                };
                Ok((parse(c)?, parse(p)?))
            })
            .collect::<Result<Vec<_>>>()?;
        let params = ParamSet::load(&dir.join("model.params"))?;
        let ids = Encoder::ids_by_name(&params, &config, vocab)?;
        let encoder = Encoder::from_params(&params, &config, vocab, ids)?;
        let head = PredictionHead {
            weights: params
                .id("head.weights")
                .ok_or_else(|| Error::Config("checkpoint lacks head.weights".into()))?,
            bias: params
                .id("head.bias")
                .ok_or_else(|| Error::Config("checkpoint lacks head.bias".into()))?,
        };
        Ok(Self {
            params,
            encoder,
            head,
            num_labels,
            edges,
        })
    }
}

#[derive(Clone, Debug)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training loss of the epoch's last `loss_window` batches.
    pub recent_loss: f64,
    pub mean_loss: f64,
    pub validation: EvalReport,
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// Parameters from the best validation epoch.
    pub model: MatchModel,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

/// Adam training with per-epoch validation and early stopping on NDCG@3.
pub fn train_classifier(
    mut model: MatchModel,
    train: &[&Document],
    validation: &[&Document],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Argument("training split is empty".into()));
    }
    if validation.is_empty() {
        return Err(Error::Argument("validation split is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut adam = Adam::new(&model.params, config.lr);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, ParamSet)> = None;
    let fingerprint = format!("seed={}", config.seed);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut losses = Vec::new();
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Document> = chunk.iter().map(|&i| train[i]).collect();
            let mut g = Graph::new();
            let obj = model.objective(&mut g, &batch, config, &mut Mode::Train(&mut rng))?;
            losses.push(g.value(obj.total).item()?);
            let grads = g.backward(obj.total)?.for_params(&model.params);
            adam.step(&mut model.params, &grads)?;
        }
        let window = &losses[losses.len().saturating_sub(config.loss_window)..];
        let recent_loss = window.iter().sum::<f64>() / window.len() as f64;
        let mean_loss = losses.iter().sum::<f64>() / losses.len() as f64;
        let (report, _) = model.evaluate(validation, &fingerprint)?;
        info!(
            "epoch {epoch}: loss {recent_loss:.5} (last {} batches), validation {report}",
            window.len()
        );
        let score = report.ndcg3;
        history.push(EpochRecord {
            epoch,
            recent_loss,
            mean_loss,
            validation: report,
        });
        match &best {
            Some((b, _, _)) if score <= *b => {}
            _ => best = Some((score, epoch, model.params.clone())),
        }
        let best_epoch = best.as_ref().map_or(epoch, |b| b.1);
        if config.patience > 0 && epoch - best_epoch >= config.patience {
            info!("early stop after epoch {epoch}; best epoch {best_epoch}");
            break;
        }
    }
    let (_, best_epoch, params) = best.expect("at least one epoch ran");
    model.params = params;
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
    })
}
