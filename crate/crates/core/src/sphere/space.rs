use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::Tensor;
use crate::corpus::Vocabulary;
use crate::error::{Error, Result};

const MAGIC: &str = "match-embeddings v1";

/// Which table a vector lives in.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TableRef {
    Docs,
    Metadata(u16),
    Labels,
    Words,
    Contexts,
}

/// Unit-norm tables for documents, metadata (per type), labels, center
/// words, and context words. Row `i` of a table is the vector of id `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSpace {
    pub dim: usize,
    pub docs: Tensor,
    pub metadata: Vec<(String, Tensor)>,
    pub labels: Tensor,
    pub words: Tensor,
    pub contexts: Tensor,
}

/// Gaussian rows scaled to unit length.
pub fn random_unit_table<R: Rng + ?Sized>(rows: usize, dim: usize, rng: &mut R) -> Tensor {
    let mut t = Tensor::zeros(rows, dim);
    for r in 0..rows {
        let row = t.row_mut(r);
        loop {
            for v in row.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            let n = super::norm(row);
            if n > 1e-8 {
                row.iter_mut().for_each(|v| *v /= n);
                break;
            }
        }
    }
    t
}

impl EmbeddingSpace {
    pub fn random<R: Rng + ?Sized>(num_docs: usize, vocab: &Vocabulary, dim: usize, rng: &mut R) -> Self {
        let docs = random_unit_table(num_docs, dim, rng);
        let metadata = vocab
            .metadata
            .iter()
            .map(|(name, t)| (name.clone(), random_unit_table(t.len(), dim, rng)))
            .collect();
        let labels = random_unit_table(vocab.labels.len(), dim, rng);
        let words = random_unit_table(vocab.words.len(), dim, rng);
        let contexts = random_unit_table(vocab.words.len(), dim, rng);
        Self {
            dim,
            docs,
            metadata,
            labels,
            words,
            contexts,
        }
    }

    pub fn table(&self, t: TableRef) -> &Tensor {
        match t {
            TableRef::Docs => &self.docs,
            TableRef::Metadata(k) => &self.metadata[k as usize].1,
            TableRef::Labels => &self.labels,
            TableRef::Words => &self.words,
            TableRef::Contexts => &self.contexts,
        }
    }

    pub fn table_mut(&mut self, t: TableRef) -> &mut Tensor {
        match t {
            TableRef::Docs => &mut self.docs,
            TableRef::Metadata(k) => &mut self.metadata[k as usize].1,
            TableRef::Labels => &mut self.labels,
            TableRef::Words => &mut self.words,
            TableRef::Contexts => &mut self.contexts,
        }
    }

    fn tables(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![("docs".to_string(), &self.docs)];
        for (name, t) in &self.metadata {
            out.push((format!("metadata:{name}"), t));
        }
        out.push(("labels".into(), &self.labels));
        out.push(("words".into(), &self.words));
        out.push(("contexts".into(), &self.contexts));
        out
    }

    /// Largest `|‖e‖₂ − 1|` over every vector in every table.
    pub fn max_norm_deviation(&self) -> f64 {
        self.tables()
            .iter()
            .flat_map(|(_, t)| (0..t.rows()).map(move |r| (super::norm(t.row(r)) - 1.0).abs()))
            .fold(0.0, f64::max)
    }

    /// Text dump: header line, then for each table a `table <name> <count> <dim>`
    /// line followed by one whitespace-separated vector per id.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file =
            fs::File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
        let mut w = BufWriter::new(file);
        let res = (|| -> std::io::Result<()> {
            writeln!(w, "{MAGIC}")?;
            for (name, t) in self.tables() {
                writeln!(w, "table {name} {} {}", t.rows(), self.dim)?;
                for r in 0..t.rows() {
                    let row: Vec<String> = t.row(r).iter().map(f64::to_string).collect();
                    writeln!(w, "{}", row.join(" "))?;
                }
            }
            w.flush()
        })();
        res.map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
        let lines: Vec<String> = BufReader::new(file)
            .lines()
            .collect::<std::io::Result<_>>()
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        if lines.first().map(|l| l.trim()) != Some(MAGIC) {
            return Err(err(1, format!("expected header '{MAGIC}'")));
        }
        let mut i = 1;
        let mut dim = None;
        let mut tables: Vec<(String, Tensor)> = Vec::new();
        while i < lines.len() {
            if lines[i].trim().is_empty() {
                i += 1;
                continue;
            }
            let head: Vec<&str> = lines[i].split_whitespace().collect();
            let [kw, name, count, d] = head.as_slice() else {
                return Err(err(i + 1, format!("bad table header '{}'", lines[i])));
            };
            if *kw != "table" {
                return Err(err(i + 1, format!("bad table header '{}'", lines[i])));
            }
            let count: usize = count.parse().map_err(|_| err(i + 1, "bad count".into()))?;
            let d: usize = d.parse().map_err(|_| err(i + 1, "bad dimension".into()))?;
            if *dim.get_or_insert(d) != d {
                return Err(err(i + 1, "tables disagree on dimension".into()));
            }
            let mut data = Vec::with_capacity(count * d);
            for r in 0..count {
                let ln = i + 1 + r;
                let row = lines
                    .get(ln)
                    .ok_or_else(|| err(ln + 1, "unexpected end of file".into()))?;
                for tok in row.split_whitespace() {
                    data.push(
                        tok.parse::<f64>()
                            .map_err(|_| err(ln + 1, format!("bad value '{tok}'")))?,
                    );
                }
            }
            let t = Tensor::new(count, d, data).map_err(|e| err(i + 1, e.to_string()))?;
            tables.push((name.to_string(), t));
            i += 1 + count;
        }
        let mut take = |name: &str| -> Result<Tensor> {
            let pos = tables
                .iter()
                .position(|(n, _)| n == name)
                .ok_or_else(|| err(0, format!("missing table '{name}'")))?;
            Ok(tables.remove(pos).1)
        };
        let docs = take("docs")?;
        let labels = take("labels")?;
        let words = take("words")?;
        let contexts = take("contexts")?;
        let metadata = tables
            .into_iter()
            .map(|(n, t)| match n.strip_prefix("metadata:") {
                Some(k) => Ok((k.to_string(), t)),
                None => Err(err(0, format!("unexpected table '{n}'"))),
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            dim: dim.unwrap_or(0),
            docs,
            metadata,
            labels,
            words,
            contexts,
        })
    }
}
