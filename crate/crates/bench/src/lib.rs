//! Shared fixtures for the benchmarks.

use match_core::pipeline::Dataset;
use match_core::SynthConfig;

/// A synthetic dataset of `docs` documents with the default label tree.
pub fn dataset(docs: usize) -> Dataset {
    let synth = SynthConfig {
        docs,
        ..Default::default()
    };
    Dataset::synthetic(&synth, 1, (0.8, 0.1, 0.1), 0).expect("synthetic dataset")
}
