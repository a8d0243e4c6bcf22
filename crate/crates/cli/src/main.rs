//! `match`: synthetic data, pre-training, training, prediction, evaluation.

mod commands;
mod logging;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use match_core::config::parse_config;
use match_core::{Error, RunConfig};

/// Exit status for usage and configuration errors.
const EXIT_USAGE: u8 = 1;
/// Exit status for failures while a command runs.
const EXIT_RUNTIME: u8 = 2;

#[derive(Parser, Debug)]
#[command(
    name = "match",
    version,
    about = "Metadata-aware hierarchical multi-label text classification"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct GlobalArgs {
    /// key=value configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Override one configuration key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,

    /// Pre-training margin.
    #[arg(long, global = true)]
    pub gamma: Option<f64>,

    /// Drop author tokens.
    #[arg(long, global = true)]
    pub no_author: bool,

    /// Drop venue tokens.
    #[arg(long, global = true)]
    pub no_venue: bool,

    /// Drop reference tokens.
    #[arg(long, global = true)]
    pub no_reference: bool,

    /// Drop all metadata tokens.
    #[arg(long, global = true)]
    pub no_metadata: bool,

    /// Train from random embeddings.
    #[arg(long, global = true)]
    pub no_pretrain: bool,

    /// Disable both hierarchy regularizers.
    #[arg(long, global = true)]
    pub no_hierarchy: bool,

    /// More log output (repeat for trace).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic corpus and label hierarchy.
    Synth {
        /// Output directory for corpus.jsonl and hierarchy.tsv.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        docs: usize,
        /// Generator seed (defaults to the config seed).
        #[arg(long)]
        synth_seed: Option<u64>,
    },
    /// Pre-train embeddings on the training split.
    Pretrain,
    /// Train the classifier.
    Train {
        /// Pre-trained embeddings (default: <output>/embeddings.txt).
        #[arg(long)]
        embeddings: Option<PathBuf>,
    },
    /// Rank labels for documents in a JSON-lines file.
    Predict {
        #[arg(long)]
        input: PathBuf,
        /// Checkpoint directory (default: <output>/model).
        #[arg(long)]
        model: Option<PathBuf>,
        /// Labels per document (default: config top_k).
        #[arg(long)]
        top_k: Option<usize>,
    },
    /// Evaluate a checkpoint on one split.
    Eval {
        /// Checkpoint directory (default: <output>/model).
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth { .. } => "synth",
            Command::Pretrain => "pretrain",
            Command::Train { .. } => "train",
            Command::Predict { .. } => "predict",
            Command::Eval { .. } => "eval",
        }
    }
}

/// File values, then `--set`, then dedicated flags.
pub fn resolve_config(args: &GlobalArgs) -> anyhow::Result<RunConfig> {
    let mut pairs = Vec::new();
    for o in &args.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| anyhow::anyhow!("--set expects KEY=VALUE, got '{o}'"))?;
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    if let Some(g) = args.gamma {
        pairs.push(("gamma".into(), g.to_string()));
    }
    let masked: Vec<&str> = [
        (args.no_author, "authors"),
        (args.no_venue, "venue"),
        (args.no_reference, "references"),
    ]
    .iter()
    .filter(|(on, _)| *on)
    .map(|(_, name)| *name)
    .collect();
    if !masked.is_empty() {
        pairs.push(("masked_metadata".into(), masked.join(",")));
    }
    if args.no_metadata {
        pairs.push(("drop_all_metadata".into(), "true".into()));
    }
    if args.no_pretrain {
        pairs.push(("pretrain".into(), "false".into()));
    }
    if args.no_hierarchy {
        pairs.push(("lambda1".into(), "0".into()));
        pairs.push(("lambda2".into(), "0".into()));
    }
    Ok(parse_config(args.config.as_deref(), &pairs)?)
}

fn exit_code_for(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Config(_) | Error::Argument(_)) => EXIT_USAGE,
        _ => EXIT_RUNTIME,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let config = match resolve_config(&cli.global) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    match commands::run(&cli, &config) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
