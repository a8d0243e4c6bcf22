//! Metadata-aware Transformer encoder.
//!
//! Input rows are `C` learned `[CLS]` vectors, then the document's metadata
//! embeddings, then its word embeddings. Each row is concatenated with a
//! position vector (sinusoidal for words, zero otherwise) and projected from
//! `2δ` back to `δ`. `L` post-norm Transformer layers follow, and the final
//! `[CLS]` states are concatenated into a `C·δ` document representation.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, ParamId, ParamSet, Tensor, Var};
use crate::corpus::{Document, Vocabulary};
use crate::error::{Error, Result};
use crate::sphere::{random_unit_table, EmbeddingSpace};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub layers: usize,
    pub heads: usize,
    pub cls_tokens: usize,
    pub dim: usize,
    /// 0 means `4 * dim`.
    pub ffn_dim: usize,
    pub dropout: f64,
    /// Total rows, `[CLS]` included.
    pub max_len: usize,
    /// Metadata types whose tokens are dropped from the input.
    pub masked_metadata: Vec<String>,
    pub drop_all_metadata: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            layers: 3,
            heads: 2,
            cls_tokens: 8,
            dim: 100,
            ffn_dim: 0,
            dropout: 0.1,
            max_len: 256,
            masked_metadata: Vec::new(),
            drop_all_metadata: false,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.heads == 0 || self.cls_tokens == 0 || self.dim == 0 {
            return Err(Error::Config(
                "layers, heads, cls_tokens and dim must all be >= 1".into(),
            ));
        }
        if !self.dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "model dimension {} is not divisible by {} heads",
                self.dim, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        if self.max_len <= self.cls_tokens {
            return Err(Error::Config(format!(
                "max_len {} leaves no room after {} [CLS] tokens",
                self.max_len, self.cls_tokens
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn ffn_width(&self) -> usize {
        if self.ffn_dim == 0 {
            4 * self.dim
        } else {
            self.ffn_dim
        }
    }

    pub fn output_dim(&self) -> usize {
        self.cls_tokens * self.dim
    }
}

/// Row `p`: `sin(p / 10000^(2i/δ))` at index `2i`, the matching cosine at `2i + 1`.
pub fn sinusoidal_positions(len: usize, dim: usize) -> Tensor {
    let mut t = Tensor::zeros(len, dim);
    for p in 0..len {
        for j in 0..dim {
            let pair = (j / 2) * 2;
            let angle = p as f64 / 10000f64.powf(pair as f64 / dim as f64);
            t.set(p, j, if j % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    t
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TokenRole {
    Cls,
    Metadata,
    Word,
}

/// Hidden states of one document plus the role of each row.
#[derive(Clone, Debug)]
pub struct ActivationSeq {
    pub h: Tensor,
    pub roles: Vec<TokenRole>,
}

#[derive(Clone, Debug)]
pub struct LayerParams {
    pub query: Vec<ParamId>,
    pub key: Vec<ParamId>,
    pub value: Vec<ParamId>,
    pub output: ParamId,
    pub norm1_gain: ParamId,
    pub norm1_bias: ParamId,
    pub ffn_in: ParamId,
    pub ffn_in_bias: ParamId,
    pub ffn_out: ParamId,
    pub ffn_out_bias: ParamId,
    pub norm2_gain: ParamId,
    pub norm2_bias: ParamId,
}

/// Parameter handles of the encoder inside a shared [`ParamSet`].
#[derive(Clone, Debug)]
pub struct EncoderParams {
    pub words: ParamId,
    pub metadata: Vec<ParamId>,
    pub cls: ParamId,
    pub position_proj: ParamId,
    pub position_bias: ParamId,
    pub layers: Vec<LayerParams>,
}

/// Whether dropout is active; training mode carries the mask RNG.
pub enum Mode<'r> {
    Eval,
    Train(&'r mut ChaCha8Rng),
}

impl Mode<'_> {
    fn dropout(&mut self, g: &mut Graph, x: Var, rate: f64) -> Result<Var> {
        match self {
            Mode::Eval => Ok(x),
            Mode::Train(rng) => g.dropout(x, rate, &mut **rng),
        }
    }
}

fn xavier<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(rows, cols, data).expect("sized")
}

#[derive(Clone, Debug)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub ids: EncoderParams,
    masked_kinds: Vec<bool>,
}

impl Encoder {
    /// Registers freshly initialized encoder parameters in `params`.
    /// Embedding tables come from `space` when given (pre-trained start),
    /// otherwise random unit vectors.
    pub fn init<R: Rng + ?Sized>(
        params: &mut ParamSet,
        config: &EncoderConfig,
        vocab: &Vocabulary,
        space: Option<&EmbeddingSpace>,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let d = config.dim;
        let (words, metadata_tables) = match space {
            Some(s) => {
                if s.dim != d {
                    return Err(Error::Config(format!(
                        "pre-trained embeddings have dimension {}, encoder expects {d}",
                        s.dim
                    )));
                }
                if s.words.rows() != vocab.words.len() || s.metadata.len() != vocab.metadata.len() {
                    return Err(Error::Config(
                        "pre-trained embeddings do not match the vocabulary".into(),
                    ));
                }
                for ((name, t), (vname, vt)) in s.metadata.iter().zip(&vocab.metadata) {
                    if name != vname || t.rows() != vt.len() {
                        return Err(Error::Config(format!(
                            "pre-trained metadata table '{name}' does not match vocabulary table '{vname}'"
                        )));
                    }
                }
                (
                    s.words.clone(),
                    s.metadata.iter().map(|(_, t)| t.clone()).collect(),
                )
            }
            None => (
                random_unit_table(vocab.words.len(), d, rng),
                vocab
                    .metadata
                    .iter()
                    .map(|(_, t)| random_unit_table(t.len(), d, rng))
                    .collect::<Vec<_>>(),
            ),
        };
        let words = params.insert("encoder.words", words);
        let metadata = vocab
            .metadata
            .iter()
            .zip(metadata_tables)
            .map(|((name, _), t)| params.insert(format!("encoder.metadata.{name}"), t))
            .collect();
        let cls = params.insert("encoder.cls", random_unit_table(config.cls_tokens, d, rng));

        // Token half starts as the identity so pre-trained geometry survives
        // the projection; the position half starts small.
        let mut proj = xavier(2 * d, d, rng);
        for r in 0..d {
            for c in 0..d {
                proj.set(r, c, if r == c { 1.0 } else { 0.0 });
            }
        }
        for r in d..2 * d {
            for c in 0..d {
                let v = proj.get(r, c);
                proj.set(r, c, 0.1 * v);
            }
        }
        let position_proj = params.insert("encoder.position_proj", proj);
        let position_bias = params.insert("encoder.position_bias", Tensor::zeros(1, d));

        let hd = config.head_dim();
        let f = config.ffn_width();
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let p = |n: &str| format!("encoder.layer{l}.{n}");
            let head_params = |kind: &str, params: &mut ParamSet, rng: &mut R| -> Vec<ParamId> {
                (0..config.heads)
                    .map(|h| params.insert(p(&format!("{kind}{h}")), xavier(d, hd, rng)))
                    .collect()
            };
            let query = head_params("query", params, rng);
            let key = head_params("key", params, rng);
            let value = head_params("value", params, rng);
            layers.push(LayerParams {
                query,
                key,
                value,
                output: params.insert(p("output"), xavier(d, d, rng)),
                norm1_gain: params.insert(p("norm1_gain"), Tensor::filled(1, d, 1.0)),
                norm1_bias: params.insert(p("norm1_bias"), Tensor::zeros(1, d)),
                ffn_in: params.insert(p("ffn_in"), xavier(d, f, rng)),
                ffn_in_bias: params.insert(p("ffn_in_bias"), Tensor::zeros(1, f)),
                ffn_out: params.insert(p("ffn_out"), xavier(f, d, rng)),
                ffn_out_bias: params.insert(p("ffn_out_bias"), Tensor::zeros(1, d)),
                norm2_gain: params.insert(p("norm2_gain"), Tensor::filled(1, d, 1.0)),
                norm2_bias: params.insert(p("norm2_bias"), Tensor::zeros(1, d)),
            });
        }
        let ids = EncoderParams {
            words,
            metadata,
            cls,
            position_proj,
            position_bias,
            layers,
        };
        Self::from_params(params, config, vocab, ids)
    }

    /// Rebuilds an encoder around existing parameters (e.g. from a checkpoint).
    pub fn from_params(
        params: &ParamSet,
        config: &EncoderConfig,
        vocab: &Vocabulary,
        ids: EncoderParams,
    ) -> Result<Self> {
        config.validate()?;
        for name in &config.masked_metadata {
            if vocab.metadata_kind(name).is_none() {
                return Err(Error::Config(format!(
                    "cannot mask unknown metadata type '{name}'"
                )));
            }
        }
        let masked_kinds = vocab
            .metadata
            .iter()
            .map(|(n, _)| config.drop_all_metadata || config.masked_metadata.contains(n))
            .collect();
        let d = config.dim;
        let expect = |id: ParamId, shape: (usize, usize)| -> Result<()> {
            let got = params.get(id).shape();
            if got != shape {
                return Err(Error::Shape {
                    op: "encoder parameter",
                    left: got,
                    right: shape,
                });
            }
            Ok(())
        };
        expect(ids.cls, (config.cls_tokens, d))?;
        expect(ids.position_proj, (2 * d, d))?;
        if ids.layers.len() != config.layers {
            return Err(Error::Config("layer count does not match parameters".into()));
        }
        Ok(Self {
            config: config.clone(),
            ids,
            masked_kinds,
        })
    }

    /// Looks up encoder handles by the names [`init`](Self::init) registers.
    pub fn ids_by_name(
        params: &ParamSet,
        config: &EncoderConfig,
        vocab: &Vocabulary,
    ) -> Result<EncoderParams> {
        let get = |name: String| {
            params
                .id(&name)
                .ok_or_else(|| Error::Config(format!("checkpoint lacks tensor '{name}'")))
        };
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let p = |n: &str| format!("encoder.layer{l}.{n}");
            let heads = |kind: &str| -> Result<Vec<ParamId>> {
                (0..config.heads).map(|h| get(p(&format!("{kind}{h}")))).collect()
            };
            layers.push(LayerParams {
                query: heads("query")?,
                key: heads("key")?,
                value: heads("value")?,
                output: get(p("output"))?,
                norm1_gain: get(p("norm1_gain"))?,
                norm1_bias: get(p("norm1_bias"))?,
                ffn_in: get(p("ffn_in"))?,
                ffn_in_bias: get(p("ffn_in_bias"))?,
                ffn_out: get(p("ffn_out"))?,
                ffn_out_bias: get(p("ffn_out_bias"))?,
                norm2_gain: get(p("norm2_gain"))?,
                norm2_bias: get(p("norm2_bias"))?,
            });
        }
        Ok(EncoderParams {
            words: get("encoder.words".into())?,
            metadata: vocab
                .metadata
                .iter()
                .map(|(n, _)| get(format!("encoder.metadata.{n}")))
                .collect::<Result<_>>()?,
            cls: get("encoder.cls".into())?,
            position_proj: get("encoder.position_proj".into())?,
            position_bias: get("encoder.position_bias".into())?,
            layers,
        })
    }

    /// Projected layer input `H⁽⁰⁾` for `doc`, with row roles.
    pub fn input_sequence(
        &self,
        g: &mut Graph,
        params: &ParamSet,
        doc: &Document,
    ) -> Result<(Var, Vec<TokenRole>)> {
        let c = self.config.cls_tokens;
        let d = self.config.dim;
        let budget = self.config.max_len - c;
        let metadata: Vec<_> = doc
            .metadata
            .iter()
            .filter(|m| !self.masked_kinds.get(m.kind as usize).copied().unwrap_or(false))
            .take(budget)
            .collect();
        let n_words = doc.words.len().min(budget - metadata.len());
        if metadata.is_empty() && n_words == 0 {
            return Err(Error::Validation(format!(
                "document '{}' has no tokens left after masking and truncation",
                doc.id
            )));
        }

        let mut parts = vec![g.param(params, self.ids.cls)?];
        let mut roles = vec![TokenRole::Cls; c];
        // Consecutive tokens of one type share a single gather.
        let mut start = 0;
        while start < metadata.len() {
            let kind = metadata[start].kind;
            let end = metadata[start..]
                .iter()
                .position(|m| m.kind != kind)
                .map_or(metadata.len(), |p| start + p);
            let table_id = *self.ids.metadata.get(kind as usize).ok_or_else(|| {
                Error::Validation(format!("document '{}' uses unknown metadata type {kind}", doc.id))
            })?;
            let table = g.param(params, table_id)?;
            let rows: Vec<usize> = metadata[start..end].iter().map(|m| m.id as usize).collect();
            parts.push(g.gather_rows(table, &rows)?);
            roles.extend(std::iter::repeat_n(TokenRole::Metadata, end - start));
            start = end;
        }
        if n_words > 0 {
            let table = g.param(params, self.ids.words)?;
            let rows: Vec<usize> = doc.words[..n_words].iter().map(|&w| w as usize).collect();
            parts.push(g.gather_rows(table, &rows)?);
            roles.extend(std::iter::repeat_n(TokenRole::Word, n_words));
        }
        let tokens = g.concat_rows(&parts)?;

        let n = roles.len();
        let mut positions = Tensor::zeros(n, d);
        let word_pos = sinusoidal_positions(n_words, d);
        for p in 0..n_words {
            positions
                .row_mut(n - n_words + p)
                .copy_from_slice(word_pos.row(p));
        }
        let positions = g.constant(positions)?;
        let joined = g.concat_cols(&[tokens, positions])?;
        let w = g.param(params, self.ids.position_proj)?;
        let b = g.param(params, self.ids.position_bias)?;
        let projected = g.matmul(joined, w)?;
        Ok((g.add_row(projected, b)?, roles))
    }

    /// Value-only view of [`input_sequence`](Self::input_sequence).
    pub fn build_input_sequence(&self, params: &ParamSet, doc: &Document) -> Result<ActivationSeq> {
        let mut g = Graph::new();
        let (h, roles) = self.input_sequence(&mut g, params, doc)?;
        Ok(ActivationSeq {
            h: g.value(h).clone(),
            roles,
        })
    }

    /// Per head `softmax(q Wq (H Wk)ᵀ / √δ) H Wv`, heads concatenated and
    /// multiplied by `Wo`. Also returns each head's attention matrix.
    pub fn multi_head_attention(
        &self,
        g: &mut Graph,
        params: &ParamSet,
        layer: usize,
        query: Var,
        h: Var,
    ) -> Result<(Var, Vec<Var>)> {
        let lp = &self.ids.layers[layer];
        let scale = 1.0 / (self.config.dim as f64).sqrt();
        let mut heads = Vec::with_capacity(self.config.heads);
        let mut weights = Vec::with_capacity(self.config.heads);
        for i in 0..self.config.heads {
            let wq = g.param(params, lp.query[i])?;
            let wk = g.param(params, lp.key[i])?;
            let wv = g.param(params, lp.value[i])?;
            let q = g.matmul(query, wq)?;
            let k = g.matmul(h, wk)?;
            let v = g.matmul(h, wv)?;
            let scores = g.matmul_nt(q, k)?;
            let scores = g.scale(scores, scale)?;
            let attn = g.softmax_rows(scores)?;
            heads.push(g.matmul(attn, v)?);
            weights.push(attn);
        }
        let joined = if heads.len() == 1 {
            heads[0]
        } else {
            g.concat_cols(&heads)?
        };
        let wo = g.param(params, lp.output)?;
        Ok((g.matmul(joined, wo)?, weights))
    }

    /// `Z = LN(H + MHA(H, H))`, then `LN(Z + FFN(Z))`.
    pub fn transformer_layer(
        &self,
        g: &mut Graph,
        params: &ParamSet,
        layer: usize,
        h: Var,
        mode: &mut Mode,
    ) -> Result<Var> {
        let lp = &self.ids.layers[layer];
        let rate = self.config.dropout;
        let (att, _) = self.multi_head_attention(g, params, layer, h, h)?;
        let att = mode.dropout(g, att, rate)?;
        let z = g.add(h, att)?;
        let z = self.norm(g, params, z, lp.norm1_gain, lp.norm1_bias)?;

        let w1 = g.param(params, lp.ffn_in)?;
        let b1 = g.param(params, lp.ffn_in_bias)?;
        let w2 = g.param(params, lp.ffn_out)?;
        let b2 = g.param(params, lp.ffn_out_bias)?;
        let inner = g.matmul(z, w1)?;
        let inner = g.add_row(inner, b1)?;
        let inner = g.relu(inner)?;
        let ffn = g.matmul(inner, w2)?;
        let ffn = g.add_row(ffn, b2)?;
        let ffn = mode.dropout(g, ffn, rate)?;
        let out = g.add(z, ffn)?;
        self.norm(g, params, out, lp.norm2_gain, lp.norm2_bias)
    }

    fn norm(&self, g: &mut Graph, params: &ParamSet, x: Var, gain: ParamId, bias: ParamId) -> Result<Var> {
        let n = g.layer_norm(x, LAYER_NORM_EPS)?;
        let gain = g.param(params, gain)?;
        let bias = g.param(params, bias)?;
        let scaled = g.mul_row(n, gain)?;
        g.add_row(scaled, bias)
    }

    /// Full stack; returns the final hidden states `H⁽ᴸ⁾`.
    pub fn encode_sequence(
        &self,
        g: &mut Graph,
        params: &ParamSet,
        doc: &Document,
        mode: &mut Mode,
    ) -> Result<Var> {
        let (mut h, _) = self.input_sequence(g, params, doc)?;
        h = mode.dropout(g, h, self.config.dropout)?;
        for layer in 0..self.config.layers {
            h = self.transformer_layer(g, params, layer, h, mode)?;
        }
        Ok(h)
    }

    /// Concatenated final `[CLS]` states, a `1 x C·δ` row.
    pub fn encode_document(
        &self,
        g: &mut Graph,
        params: &ParamSet,
        doc: &Document,
        mode: &mut Mode,
    ) -> Result<Var> {
        let h = self.encode_sequence(g, params, doc, mode)?;
        let cls = g.slice_rows(h, 0, self.config.cls_tokens)?;
        g.reshape(cls, 1, self.config.output_dim())
    }
}
