use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Partition {
    Train,
    Validation,
    Test,
}

impl std::str::FromStr for Partition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Partition::Train),
            "validation" => Ok(Partition::Validation),
            "test" => Ok(Partition::Test),
            other => Err(Error::Argument(format!(
                "unknown split '{other}' (expected train, validation, or test)"
            ))),
        }
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Partition::Train => "train",
            Partition::Validation => "validation",
            Partition::Test => "test",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CorpusSplit {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
}

/// Shuffles `ids` under `seed` and cuts train/validation/test by `ratios`.
/// Partition sizes are the rounded ratios, with the test part taking the rest.
pub fn split_corpus(ids: &[String], ratios: (f64, f64, f64), seed: u64) -> Result<CorpusSplit> {
    let (tr, va, te) = ratios;
    if !(tr > 0.0 && va > 0.0 && te > 0.0) || ((tr + va + te) - 1.0).abs() > 1e-9 {
        return Err(Error::Argument(format!(
            "split ratios must be positive and sum to 1, got ({tr}, {va}, {te})"
        )));
    }
    if ids.len() < 3 {
        return Err(Error::Argument(format!(
            "cannot split {} documents into three parts",
            ids.len()
        )));
    }
    let n = ids.len();
    let mut order: Vec<String> = ids.to_vec();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((n as f64) * tr).round() as usize;
    let n_val = (((n as f64) * va).round() as usize).min(n - n_train);
    let test = order.split_off(n_train + n_val);
    let validation = order.split_off(n_train);
    Ok(CorpusSplit {
        train: order,
        validation,
        test,
        seed,
    })
}

impl CorpusSplit {
    pub fn ids(&self, part: Partition) -> &[String] {
        match part {
            Partition::Train => &self.train,
            Partition::Validation => &self.validation,
            Partition::Test => &self.test,
        }
    }

    /// Manifest: a `# seed=<n>` header, then `partition<TAB>id` lines.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        writeln!(out, "# seed={}", self.seed).expect("write to vec");
        for part in [Partition::Train, Partition::Validation, Partition::Test] {
            for id in self.ids(part) {
                writeln!(out, "{part}\t{id}").expect("write to vec");
            }
        }
        fs::write(path, out).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut split = CorpusSplit {
            train: Vec::new(),
            validation: Vec::new(),
            test: Vec::new(),
            seed: 0,
        };
        for (i, line) in text.lines().enumerate() {
            if let Some(seed) = line.strip_prefix("# seed=") {
                split.seed = seed.trim().parse().map_err(|_| err(i + 1, "bad seed".into()))?;
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let (part, id) = line
                .split_once('\t')
                .ok_or_else(|| err(i + 1, format!("expected 'partition<TAB>id', got '{line}'")))?;
            let bucket = match part {
                "train" => &mut split.train,
                "validation" => &mut split.validation,
                "test" => &mut split.test,
                other => return Err(err(i + 1, format!("unknown partition '{other}'"))),
            };
            bucket.push(id.to_string());
        }
        Ok(split)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("d{i}")).collect()
    }

    #[test]
    fn ten_docs_eighty_ten_ten() {
        let s = split_corpus(&ids(10), (0.8, 0.1, 0.1), 7).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (8, 1, 1));
    }

    #[test]
    fn deterministic_under_seed() {
        let a = split_corpus(&ids(10), (0.8, 0.1, 0.1), 7).unwrap();
        let b = split_corpus(&ids(10), (0.8, 0.1, 0.1), 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn different_seeds_differ_on_hundred_docs() {
        let a = split_corpus(&ids(100), (0.8, 0.1, 0.1), 1).unwrap();
        let b = split_corpus(&ids(100), (0.8, 0.1, 0.1), 2).unwrap();
        assert_ne!(a.train, b.train);
    }

    #[test]
    fn bad_ratios_and_tiny_corpus() {
        assert!(split_corpus(&ids(10), (0.5, 0.5, 0.5), 0).is_err());
        assert!(split_corpus(&ids(10), (1.0, 0.0, 0.0), 0).is_err());
        assert!(split_corpus(&ids(2), (0.8, 0.1, 0.1), 0).is_err());
    }

    #[test]
    fn partition_is_disjoint_cover() {
        for n in [3, 7, 31, 200] {
            let s = split_corpus(&ids(n), (0.7, 0.2, 0.1), 5).unwrap();
            let all: HashSet<&String> = s.train.iter().chain(&s.validation).chain(&s.test).collect();
            assert_eq!(all.len(), n);
            assert_eq!(s.train.len() + s.validation.len() + s.test.len(), n);
            assert!((s.train.len() as f64 - 0.7 * n as f64).abs() <= 1.0);
            assert!((s.validation.len() as f64 - 0.2 * n as f64).abs() <= 1.0);
            assert!((s.test.len() as f64 - 0.1 * n as f64).abs() <= 1.0);
        }
    }

    #[test]
    fn partition_names_roundtrip() {
        for p in [Partition::Train, Partition::Validation, Partition::Test] {
            assert_eq!(p.to_string().parse::<Partition>().unwrap(), p);
        }
        assert!("dev".parse::<Partition>().is_err());
    }

    #[test]
    fn manifest_roundtrip() {
        let s = split_corpus(&ids(20), (0.6, 0.2, 0.2), 11).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("split.tsv");
        s.save(&p).unwrap();
        assert_eq!(CorpusSplit::load(&p).unwrap(), s);
    }
}
