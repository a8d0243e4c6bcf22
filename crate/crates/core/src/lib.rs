//! Metadata-aware hierarchical multi-label text classification.
//!
//! The pipeline has four stages:
//!
//! 1. [`sphere`]: joint pre-training of document, metadata, label, and word
//!    embeddings on the unit sphere with margin ranking losses and
//!    Riemannian SGD.
//! 2. [`encoder`]: a Transformer over `[CLS]` tokens, metadata tokens, and
//!    words, whose final `[CLS]` states form the document representation.
//! 3. [`classifier`]: per-label sigmoids trained with binary cross-entropy
//!    plus hierarchy penalties on label weights and on output probabilities.
//! 4. [`metrics`]: P@k and NDCG@k.
//!
//! [`autodiff`] supplies the tensors, reverse-mode tape, and Adam used by
//! stages 2 and 3. [`pipeline`] wires everything into end-to-end runs.

pub mod autodiff;
pub mod classifier;
pub mod config;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod metrics;
pub mod pipeline;
pub mod sphere;
pub mod taxonomy;

pub use classifier::{top_k_labels, MatchModel, TrainConfig, TrainOutcome};
pub use config::{parse_config, RunConfig};
pub use corpus::{Corpus, Document, RawDocument, Schema, SynthConfig, Vocabulary};
pub use encoder::EncoderConfig;
pub use error::{Error, Result};
pub use metrics::{ndcg_at_k, precision_at_k, EvalReport};
pub use pipeline::{Dataset, RunSummary};
pub use sphere::{EmbeddingSpace, PretrainConfig};
pub use taxonomy::{LabelHierarchy, LabelId};
