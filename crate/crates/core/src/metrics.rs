//! Rank-based evaluation: P@k and NDCG@k.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::warn;

use crate::error::{Error, Result};
use crate::taxonomy::LabelId;

fn is_hit(truth: &[LabelId], label: LabelId) -> bool {
    truth.contains(&label)
}

/// Fraction of the top `k` ranked labels that are true. Rankings shorter
/// than `k` still divide by `k`.
pub fn precision_at_k(truth: &[LabelId], ranking: &[LabelId], k: usize) -> Result<f64> {
    if k < 1 {
        return Err(Error::Argument("k must be at least 1".into()));
    }
    let hits = ranking.iter().take(k).filter(|&&l| is_hit(truth, l)).count();
    Ok(hits as f64 / k as f64)
}

/// DCG with gain `1/log2(i+1)`, normalized by the ideal DCG over
/// `min(k, |truth|)` positions.
pub fn ndcg_at_k(truth: &[LabelId], ranking: &[LabelId], k: usize) -> Result<f64> {
    if k < 1 {
        return Err(Error::Argument("k must be at least 1".into()));
    }
    if truth.is_empty() {
        return Err(Error::Argument(
            "NDCG is undefined for a document with no true labels".into(),
        ));
    }
    let gain = |i: usize| 1.0 / ((i + 2) as f64).log2();
    let dcg: f64 = ranking
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, &l)| is_hit(truth, l))
        .map(|(i, _)| gain(i))
        .sum();
    let ideal: f64 = (0..k.min(truth.len())).map(gain).sum();
    Ok(dcg / ideal)
}

/// Mean metrics over a set of documents.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub p1: f64,
    pub p3: f64,
    pub p5: f64,
    pub ndcg1: f64,
    pub ndcg3: f64,
    pub ndcg5: f64,
    pub documents: usize,
    pub fingerprint: String,
}

/// Per-document metric values, in report column order.
#[derive(Clone, Debug, PartialEq)]
pub struct DocumentScores {
    pub id: String,
    pub values: [f64; 6],
}

pub const COLUMNS: [&str; 6] = ["P@1", "P@3", "P@5", "NDCG@1", "NDCG@3", "NDCG@5"];

pub fn document_scores(truth: &[LabelId], ranking: &[LabelId]) -> Result<[f64; 6]> {
    Ok([
        precision_at_k(truth, ranking, 1)?,
        precision_at_k(truth, ranking, 3)?,
        precision_at_k(truth, ranking, 5)?,
        ndcg_at_k(truth, ranking, 1)?,
        ndcg_at_k(truth, ranking, 3)?,
        ndcg_at_k(truth, ranking, 5)?,
    ])
}

impl EvalReport {
    /// Averages per-document metrics over `(id, truth, ranking)` triples.
    /// Documents with no true labels are skipped with a warning.
    pub fn from_rankings<'a, I>(
        items: I,
        fingerprint: impl Into<String>,
    ) -> Result<(Self, Vec<DocumentScores>)>
    where
        I: IntoIterator<Item = (&'a str, &'a [LabelId], &'a [LabelId])>,
    {
        let mut sums = [0.0; 6];
        let mut per_doc = Vec::new();
        for (id, truth, ranking) in items {
            if truth.is_empty() {
                warn!("document '{id}' has no true labels; excluded from evaluation");
                continue;
            }
            let values = document_scores(truth, ranking)?;
            for (s, v) in sums.iter_mut().zip(values) {
                *s += v;
            }
            per_doc.push(DocumentScores {
                id: id.to_string(),
                values,
            });
        }
        if per_doc.is_empty() {
            return Err(Error::Argument("cannot evaluate an empty split".into()));
        }
        let n = per_doc.len() as f64;
        let m = sums.map(|s| s / n);
        Ok((
            Self {
                p1: m[0],
                p3: m[1],
                p5: m[2],
                ndcg1: m[3],
                ndcg3: m[4],
                ndcg5: m[5],
                documents: per_doc.len(),
                fingerprint: fingerprint.into(),
            },
            per_doc,
        ))
    }

    pub fn values(&self) -> [f64; 6] {
        [self.p1, self.p3, self.p5, self.ndcg1, self.ndcg3, self.ndcg5]
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{},documents,fingerprint\n", COLUMNS.join(","));
        for v in self.values() {
            let _ = write!(out, "{v},");
        }
        let _ = writeln!(out, "{},{}", self.documents, self.fingerprint);
        out
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }
}

impl std::fmt::Display for EvalReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (name, v) in COLUMNS.iter().zip(self.values()) {
            write!(f, "{name}={v:.4} ")?;
        }
        write!(f, "(n={})", self.documents)
    }
}

pub fn per_document_csv(rows: &[DocumentScores]) -> String {
    let mut out = format!("id,{}\n", COLUMNS.join(","));
    for r in rows {
        let vals: Vec<String> = r.values.iter().map(f64::to_string).collect();
        let _ = writeln!(out, "{},{}", r.id, vals.join(","));
    }
    out
}

/// Fraction of `(document, edge)` pairs with `π_child > π_parent`.
/// `probabilities` holds one row per document; `edges` are `(child, parent)`.
pub fn inversion_rate(probabilities: &[Vec<f64>], edges: &[(LabelId, LabelId)]) -> Result<f64> {
    if probabilities.is_empty() || edges.is_empty() {
        return Err(Error::Argument("inversion rate needs documents and edges".into()));
    }
    let mut inverted = 0usize;
    for row in probabilities {
        for &(c, p) in edges {
            let (Some(pc), Some(pp)) = (row.get(c as usize), row.get(p as usize)) else {
                return Err(Error::UnknownLabel(format!("#{c} or #{p}")));
            };
            if pc > pp {
                inverted += 1;
            }
        }
    }
    Ok(inverted as f64 / (probabilities.len() * edges.len()) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precision_examples() {
        assert!((precision_at_k(&[1, 3], &[1, 2, 3], 3).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(precision_at_k(&[1, 2, 3], &[3, 1, 2], 3).unwrap(), 1.0);
        assert_eq!(precision_at_k(&[9], &[3, 1, 2], 3).unwrap(), 0.0);
        assert!(precision_at_k(&[1], &[1], 0).is_err());
    }

    #[test]
    fn ndcg_examples() {
        let v = ndcg_at_k(&[10, 30], &[10, 20, 30], 3).unwrap();
        assert!((v - 0.919721).abs() < 1e-6, "{v}");
        assert_eq!(ndcg_at_k(&[4, 2], &[2, 4, 7], 3).unwrap(), 1.0);
        assert!(ndcg_at_k(&[], &[1], 1).is_err());
        for ranking in [[1, 2], [2, 1]] {
            assert_eq!(
                ndcg_at_k(&[2], &ranking, 1).unwrap(),
                precision_at_k(&[2], &ranking, 1).unwrap()
            );
        }
    }

    #[test]
    fn report_averages_and_skips_empty_truth() {
        let items: Vec<(&str, &[LabelId], &[LabelId])> = vec![
            ("a", &[0], &[0, 1, 2, 3, 4]),
            ("b", &[], &[0, 1, 2, 3, 4]),
            ("c", &[5], &[0, 1, 2, 3, 4]),
        ];
        let (r, per_doc) = EvalReport::from_rankings(items, "x").unwrap();
        assert_eq!(r.documents, 2);
        assert_eq!(per_doc.len(), 2);
        assert_eq!(r.p1, 0.5);
        assert_eq!(r.p1, r.ndcg1);
        assert!(r.to_csv().starts_with("P@1,P@3"));
    }

    #[test]
    fn empty_split_errors() {
        let items: Vec<(&str, &[LabelId], &[LabelId])> = Vec::new();
        assert!(EvalReport::from_rankings(items, "").is_err());
    }

    #[test]
    fn inversion_counts_strict_excess() {
        let probs = vec![vec![0.5, 0.7, 0.5], vec![0.9, 0.1, 0.9]];
        // 1 -> 0 and 2 -> 0
        let r = inversion_rate(&probs, &[(1, 0), (2, 0)]).unwrap();
        assert_eq!(r, 0.25);
    }
}
