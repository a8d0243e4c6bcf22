use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::info;
use match_core::corpus::{
    generate_synthetic, read_unlabeled, write_raw, Corpus, Partition, Schema, SynthConfig, Vocabulary,
};
use match_core::metrics::{inversion_rate, per_document_csv};
use match_core::pipeline::{fingerprint, run_experiment, run_pretraining, Dataset};
use match_core::{top_k_labels, EmbeddingSpace, MatchModel, RunConfig};

use crate::{logging, manifest, Cli, Command};

const EMBEDDINGS_FILE: &str = "embeddings.txt";
const VOCAB_FILE: &str = "vocab.txt";
const MODEL_DIR: &str = "model";

pub fn run(cli: &Cli, config: &RunConfig) -> Result<()> {
    let out = match &cli.command {
        Command::Synth { out, .. } => out.clone(),
        _ => config.output.clone(),
    };
    fs::create_dir_all(&out).with_context(|| format!("creating output directory {}", out.display()))?;
    let name = cli.command.name();
    logging::init(&out.join(format!("{name}.log")), cli.global.verbose)?;
    info!(
        "{name}: output {} (config fingerprint {})",
        out.display(),
        fingerprint(config)
    );
    match &cli.command {
        Command::Synth {
            out,
            docs,
            synth_seed,
        } => synth(config, out, *docs, synth_seed.unwrap_or(config.seed)),
        Command::Pretrain => pretrain(config),
        Command::Train { embeddings } => train(config, embeddings.as_deref()),
        Command::Predict { input, model, top_k } => predict(
            config,
            input,
            &model_dir(config, model.as_deref()),
            top_k.unwrap_or(config.top_k),
        ),
        Command::Eval { model, split } => eval(config, &model_dir(config, model.as_deref()), split.parse()?),
    }
}

fn model_dir(config: &RunConfig, given: Option<&Path>) -> PathBuf {
    given.map_or_else(|| config.output.join(MODEL_DIR), Path::to_path_buf)
}

fn require_file(path: &Path, what: &str, hint: &str) -> Result<()> {
    if !path.is_file() {
        bail!("{what} not found: {} ({hint})", path.display());
    }
    Ok(())
}

/// Corpus, hierarchy, and split files the run reads.
fn data_inputs(config: &RunConfig) -> Vec<PathBuf> {
    [&config.corpus, &config.hierarchy, &config.split]
        .into_iter()
        .flatten()
        .cloned()
        .collect()
}

fn synth(config: &RunConfig, out: &Path, docs: usize, seed: u64) -> Result<()> {
    let synth = SynthConfig {
        docs,
        ..Default::default()
    };
    let (raw, hierarchy) = generate_synthetic(&synth, seed)?;
    let corpus = out.join("corpus.jsonl");
    let tree = out.join("hierarchy.tsv");
    write_raw(&corpus, &raw, &Schema::default())?;
    hierarchy.save(&tree)?;
    let mut recorded = config.clone();
    recorded.corpus = Some(corpus.clone());
    recorded.hierarchy = Some(tree.clone());
    let mut text = manifest::render("synth", &recorded, &[corpus.clone(), tree.clone()])?;
    let _ = writeln!(text, "# synth_docs={docs}\n# synth_seed={seed}");
    fs::write(out.join("synth.manifest"), text)?;
    info!(
        "wrote {} documents to {} and {} labels to {}",
        raw.len(),
        corpus.display(),
        hierarchy.len(),
        tree.display()
    );
    println!(
        "--set corpus={} --set hierarchy={}",
        corpus.display(),
        tree.display()
    );
    Ok(())
}

fn pretrain(config: &RunConfig) -> Result<()> {
    let data = Dataset::load(config)?;
    manifest::write(&config.output, "pretrain", config, &data_inputs(config))?;
    let (space, log) = run_pretraining(&data, config)?;
    space.save(&config.output.join(EMBEDDINGS_FILE))?;
    data.corpus.vocab.save(&config.output.join(VOCAB_FILE))?;
    data.split.save(&config.output.join("split.txt"))?;
    let mut csv = String::from("epoch,DM,DL,DW,WW,total\n");
    for (e, l) in log.epoch_losses.iter().enumerate() {
        let _ = writeln!(
            csv,
            "{},{:.6},{:.6},{:.6},{:.6},{:.6}",
            e + 1,
            l[0],
            l[1],
            l[2],
            l[3],
            log.epoch_total(e)
        );
    }
    fs::write(config.output.join("pretrain_losses.csv"), csv)?;
    info!(
        "embeddings written to {}",
        config.output.join(EMBEDDINGS_FILE).display()
    );
    Ok(())
}

fn train(config: &RunConfig, embeddings: Option<&Path>) -> Result<()> {
    let mut inputs = data_inputs(config);
    let (data, space) = if config.pretrain_enabled {
        let path = embeddings.map_or_else(|| config.output.join(EMBEDDINGS_FILE), Path::to_path_buf);
        require_file(
            &path,
            "pre-trained embeddings",
            "run `match pretrain` first or pass --no-pretrain",
        )?;
        let vocab_path = path.with_file_name(VOCAB_FILE);
        let vocab = if vocab_path.is_file() {
            inputs.push(vocab_path.clone());
            Some(Vocabulary::load(&vocab_path)?)
        } else {
            None
        };
        inputs.push(path.clone());
        let space = EmbeddingSpace::load(&path)?;
        (Dataset::load_with_vocab(config, vocab)?, Some(space))
    } else {
        (Dataset::load(config)?, None)
    };
    manifest::write(&config.output, "train", config, &inputs)?;
    let summary = run_experiment(&data, config, space.as_ref())?;
    let dir = config.output.join(MODEL_DIR);
    summary.outcome.model.save(&dir)?;
    data.corpus.vocab.save(&dir.join(VOCAB_FILE))?;
    data.split.save(&config.output.join("split.txt"))?;
    let mut csv = String::from(
        "epoch,recent_loss,mean_loss,val_P@1,val_P@3,val_P@5,val_NDCG@1,val_NDCG@3,val_NDCG@5\n",
    );
    for r in &summary.outcome.history {
        let v = r.validation.values();
        let _ = writeln!(
            csv,
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            r.epoch, r.recent_loss, r.mean_loss, v[0], v[1], v[2], v[3], v[4], v[5]
        );
    }
    fs::write(config.output.join("history.csv"), csv)?;
    info!(
        "best epoch {}; validation inversion rate {:.4}; mean edge distance {:.4}",
        summary.outcome.best_epoch, summary.validation_inversion, summary.mean_edge_distance
    );
    info!("test {}", summary.test);
    info!("checkpoint written to {}", dir.display());
    Ok(())
}

fn load_checkpoint(dir: &Path) -> Result<(MatchModel, Vocabulary)> {
    for file in ["model.params", "model.cfg", VOCAB_FILE] {
        require_file(
            &dir.join(file),
            "checkpoint file",
            "run `match train` first or pass --model",
        )?;
    }
    let vocab = Vocabulary::load(&dir.join(VOCAB_FILE))?;
    let model = MatchModel::load(dir, &vocab)?;
    Ok((model, vocab))
}

fn eval(config: &RunConfig, dir: &Path, part: Partition) -> Result<()> {
    let (model, vocab) = load_checkpoint(dir)?;
    let mut cfg = config.clone();
    let saved_split = config.output.join("split.txt");
    if cfg.split.is_none() && saved_split.is_file() {
        cfg.split = Some(saved_split);
    }
    let mut inputs = data_inputs(&cfg);
    inputs.push(dir.join("model.params"));
    manifest::write(&config.output, "eval", &cfg, &inputs)?;
    let data = Dataset::load_with_vocab(&cfg, Some(vocab))?;
    let docs = data.docs(part)?;
    let (report, per_doc) = model.evaluate(&docs, &fingerprint(&cfg))?;
    let csv = config.output.join(format!("eval_{part}.csv"));
    report.save_csv(&csv)?;
    fs::write(
        config.output.join(format!("eval_{part}_per_document.csv")),
        per_document_csv(&per_doc),
    )?;
    if !model.edges.is_empty() {
        let probs = model.predict(&docs)?;
        info!(
            "{part} inversion rate {:.4}",
            inversion_rate(&probs, &model.edges)?
        );
    }
    info!("{part} {report}");
    println!("{report}");
    info!("report written to {}", csv.display());
    Ok(())
}

fn predict(config: &RunConfig, input: &Path, dir: &Path, k: usize) -> Result<()> {
    if k == 0 {
        bail!(match_core::Error::Argument("top_k must be at least 1".into()));
    }
    let (model, vocab) = load_checkpoint(dir)?;
    require_file(input, "input file", "expected JSON lines")?;
    manifest::write(
        &config.output,
        "predict",
        config,
        &[input.to_path_buf(), dir.join("model.params")],
    )?;
    let raw = read_unlabeled(input, &Schema::default())?;
    let corpus = Corpus::resolve_unlabeled(&raw, vocab)?;
    let docs: Vec<_> = corpus.docs.iter().collect();
    let probs = model.predict(&docs)?;
    let mut out = String::from("doc_id\trank\tlabel\tprobability\n");
    for (doc, p) in docs.iter().zip(&probs) {
        for (rank, l) in top_k_labels(p, k).into_iter().enumerate() {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{:.6}",
                doc.id,
                rank + 1,
                corpus.vocab.labels.form(l),
                p[l as usize]
            );
        }
    }
    let path = config.output.join("predictions.tsv");
    fs::write(&path, out).with_context(|| format!("writing {}", path.display()))?;
    info!(
        "predictions for {} documents written to {}",
        docs.len(),
        path.display()
    );
    Ok(())
}
