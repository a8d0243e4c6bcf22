//! Run manifests: the effective configuration plus a digest of the inputs.
//!
//! The manifest parses as a config file (extra fields are comments), so
//! `match --config <output>/<command>.manifest <command>` repeats the run.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use anyhow::Context;
use match_core::RunConfig;
use sha2::{Digest, Sha256};

/// SHA-256 over each input's path and contents, in order.
pub fn input_digest(inputs: &[PathBuf]) -> anyhow::Result<String> {
    let mut hasher = Sha256::new();
    for p in inputs {
        let mut file = fs::File::open(p).with_context(|| format!("opening input {}", p.display()))?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes)
            .with_context(|| format!("reading input {}", p.display()))?;
        hasher.update(p.display().to_string().as_bytes());
        hasher.update([0]);
        hasher.update(&bytes);
    }
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

pub fn render(command: &str, config: &RunConfig, inputs: &[PathBuf]) -> anyhow::Result<String> {
    let mut text = String::new();
    text.push_str(&format!("# command={command}\n"));
    text.push_str(&format!("# version={}\n", env!("CARGO_PKG_VERSION")));
    text.push_str(&format!("# seed={}\n", config.seed));
    let names: Vec<String> = inputs.iter().map(|p| p.display().to_string()).collect();
    text.push_str(&format!("# inputs={}\n", names.join(",")));
    text.push_str(&format!("# input_sha256={}\n", input_digest(inputs)?));
    text.push_str(&config.to_text());
    Ok(text)
}

pub fn write(dir: &Path, command: &str, config: &RunConfig, inputs: &[PathBuf]) -> anyhow::Result<PathBuf> {
    let path = dir.join(format!("{command}.manifest"));
    fs::write(&path, render(command, config, inputs)?)
        .with_context(|| format!("writing manifest {}", path.display()))?;
    Ok(path)
}
