//! Run configuration: a plain `key=value` file plus overrides.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::classifier::TrainConfig;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::sphere::PretrainConfig;

/// Every setting of a run. `dim` is shared by pre-training and the encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub corpus: Option<PathBuf>,
    pub hierarchy: Option<PathBuf>,
    pub split: Option<PathBuf>,
    /// Label removed from the hierarchy and every document (e.g. the root).
    pub remove_label: Option<String>,
    pub output: PathBuf,
    pub seed: u64,
    pub split_seed: u64,
    pub ratios: (f64, f64, f64),
    pub min_count: u64,
    pub pretrain_enabled: bool,
    pub pretrain: PretrainConfig,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub top_k: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            corpus: None,
            hierarchy: None,
            split: None,
            remove_label: None,
            output: PathBuf::from("out"),
            seed: 0,
            split_seed: 0,
            ratios: (0.8, 0.1, 0.1),
            min_count: 1,
            pretrain_enabled: true,
            pretrain: PretrainConfig::default(),
            encoder: EncoderConfig::default(),
            train: TrainConfig::default(),
            top_k: 5,
        }
    }
}

pub const KEYS: &[&str] = &[
    "corpus",
    "hierarchy",
    "split",
    "remove_label",
    "output",
    "seed",
    "split_seed",
    "train_ratio",
    "validation_ratio",
    "test_ratio",
    "min_count",
    "pretrain",
    "gamma",
    "window",
    "pretrain_lr",
    "pretrain_final_lr_fraction",
    "pretrain_epochs",
    "pretrain_iterations",
    "negatives",
    "literal_ascent",
    "dim",
    "layers",
    "heads",
    "cls_tokens",
    "ffn_dim",
    "dropout",
    "max_len",
    "masked_metadata",
    "drop_all_metadata",
    "lambda1",
    "lambda2",
    "lr",
    "batch_size",
    "epochs",
    "patience",
    "clamp",
    "head_from_labels",
    "loss_window",
    "top_k",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str, kind: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("'{key}' expects {kind}, got '{value}'")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("'{key}' expects a boolean, got '{value}'"))),
    }
}

fn opt_path(value: &str) -> Option<PathBuf> {
    let v = value.trim();
    (!v.is_empty()).then(|| PathBuf::from(v))
}

impl RunConfig {
    /// Sets one key; unknown keys list the valid ones.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "corpus" => self.corpus = opt_path(v),
            "hierarchy" => self.hierarchy = opt_path(v),
            "split" => self.split = opt_path(v),
            "remove_label" => self.remove_label = (!v.is_empty()).then(|| v.to_string()),
            "output" => self.output = PathBuf::from(v),
            "seed" => self.seed = parse(key, v, "an integer")?,
            "split_seed" => self.split_seed = parse(key, v, "an integer")?,
            "train_ratio" => self.ratios.0 = parse(key, v, "a number")?,
            "validation_ratio" => self.ratios.1 = parse(key, v, "a number")?,
            "test_ratio" => self.ratios.2 = parse(key, v, "a number")?,
            "min_count" => self.min_count = parse(key, v, "an integer")?,
            "pretrain" => self.pretrain_enabled = parse_bool(key, v)?,
            "gamma" => self.pretrain.gamma = parse(key, v, "a number")?,
            "window" => self.pretrain.window = parse(key, v, "an integer")?,
            "pretrain_lr" => self.pretrain.lr = parse(key, v, "a number")?,
            "pretrain_final_lr_fraction" => self.pretrain.final_lr_fraction = parse(key, v, "a number")?,
            "pretrain_epochs" => self.pretrain.epochs = parse(key, v, "an integer")?,
            "pretrain_iterations" => self.pretrain.iterations_per_epoch = parse(key, v, "an integer")?,
            "negatives" => self.pretrain.negatives = parse(key, v, "an integer")?,
            "literal_ascent" => self.pretrain.literal_ascent = parse_bool(key, v)?,
            "dim" => {
                let d = parse(key, v, "an integer")?;
                self.pretrain.dim = d;
                self.encoder.dim = d;
            }
            "layers" => self.encoder.layers = parse(key, v, "an integer")?,
            "heads" => self.encoder.heads = parse(key, v, "an integer")?,
            "cls_tokens" => self.encoder.cls_tokens = parse(key, v, "an integer")?,
            "ffn_dim" => self.encoder.ffn_dim = parse(key, v, "an integer")?,
            "dropout" => self.encoder.dropout = parse(key, v, "a number")?,
            "max_len" => self.encoder.max_len = parse(key, v, "an integer")?,
            "masked_metadata" => {
                self.encoder.masked_metadata = v
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(str::to_string)
                    .collect()
            }
            "drop_all_metadata" => self.encoder.drop_all_metadata = parse_bool(key, v)?,
            "lambda1" => self.train.lambda1 = parse(key, v, "a number")?,
            "lambda2" => self.train.lambda2 = parse(key, v, "a number")?,
            "lr" => self.train.lr = parse(key, v, "a number")?,
            "batch_size" => self.train.batch_size = parse(key, v, "an integer")?,
            "epochs" => self.train.epochs = parse(key, v, "an integer")?,
            "patience" => self.train.patience = parse(key, v, "an integer")?,
            "clamp" => self.train.clamp = parse(key, v, "a number")?,
            "head_from_labels" => self.train.head_from_labels = parse_bool(key, v)?,
            "loss_window" => self.train.loss_window = parse(key, v, "an integer")?,
            "top_k" => self.top_k = parse(key, v, "an integer")?,
            other => {
                return Err(Error::Config(format!(
                    "unknown key '{other}'; valid keys: {}",
                    KEYS.join(", ")
                )))
            }
        }
        if key.trim() == "seed" {
            self.pretrain.seed = self.seed;
            self.train.seed = self.seed;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.pretrain.validate()?;
        self.encoder.validate()?;
        self.train.validate()?;
        if self.pretrain.dim != self.encoder.dim {
            return Err(Error::Config("pre-training and encoder dimensions differ".into()));
        }
        let (a, b, c) = self.ratios;
        if [a, b, c].iter().any(|r| !(0.0..=1.0).contains(r)) || ((a + b + c) - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split ratios must be in [0, 1] and sum to 1, got {a}/{b}/{c}"
            )));
        }
        if self.min_count == 0 || self.top_k == 0 {
            return Err(Error::Config("min_count and top_k must be >= 1".into()));
        }
        Ok(())
    }

    /// All settings as `(key, value)` pairs in [`KEYS`] order; feeding them
    /// back through [`set`](Self::set) reproduces `self`.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let values = [
            path(&self.corpus),
            path(&self.hierarchy),
            path(&self.split),
            self.remove_label.clone().unwrap_or_default(),
            self.output.display().to_string(),
            self.seed.to_string(),
            self.split_seed.to_string(),
            self.ratios.0.to_string(),
            self.ratios.1.to_string(),
            self.ratios.2.to_string(),
            self.min_count.to_string(),
            self.pretrain_enabled.to_string(),
            self.pretrain.gamma.to_string(),
            self.pretrain.window.to_string(),
            self.pretrain.lr.to_string(),
            self.pretrain.final_lr_fraction.to_string(),
            self.pretrain.epochs.to_string(),
            self.pretrain.iterations_per_epoch.to_string(),
            self.pretrain.negatives.to_string(),
            self.pretrain.literal_ascent.to_string(),
            self.encoder.dim.to_string(),
            self.encoder.layers.to_string(),
            self.encoder.heads.to_string(),
            self.encoder.cls_tokens.to_string(),
            self.encoder.ffn_dim.to_string(),
            self.encoder.dropout.to_string(),
            self.encoder.max_len.to_string(),
            self.encoder.masked_metadata.join(","),
            self.encoder.drop_all_metadata.to_string(),
            self.train.lambda1.to_string(),
            self.train.lambda2.to_string(),
            self.train.lr.to_string(),
            self.train.batch_size.to_string(),
            self.train.epochs.to_string(),
            self.train.patience.to_string(),
            self.train.clamp.to_string(),
            self.train.head_from_labels.to_string(),
            self.train.loss_window.to_string(),
            self.top_k.to_string(),
        ];
        KEYS.iter().map(|k| k.to_string()).zip(values).collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.to_pairs() {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }
}

/// Parses `key=value` lines (`#` starts a comment). Later lines win.
pub fn parse_config_str(text: &str, origin: &Path) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            path: origin.to_path_buf(),
            line: i + 1,
            message: format!("expected key=value, got '{line}'"),
        })?;
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(pairs)
}

/// Defaults, then the file (if any), then `overrides` in order.
pub fn parse_config(path: Option<&Path>, overrides: &[(String, String)]) -> Result<RunConfig> {
    let mut config = RunConfig::default();
    if let Some(p) = path {
        let text = fs::read_to_string(p).map_err(|e| Error::io(format!("reading {}", p.display()), e))?;
        for (k, v) in parse_config_str(&text, p)? {
            config.set(&k, &v)?;
        }
    }
    for (k, v) in overrides {
        config.set(k, v)?;
    }
    config.validate()?;
    Ok(config)
}
