use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::tensor::Tensor;
use crate::error::{Error, Result};

const CHECKPOINT_MAGIC: &str = "match-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered collection of trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    frozen: Vec<bool>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(value);
        self.frozen.push(false);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    pub fn set_frozen(&mut self, id: ParamId, frozen: bool) {
        self.frozen[id.0] = frozen;
    }

    pub fn is_frozen(&self, id: ParamId) -> bool {
        self.frozen[id.0]
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Writes a versioned text checkpoint. Values use the shortest
    /// round-tripping decimal form, so a reload is bit-exact.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file =
            fs::File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w)
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "{CHECKPOINT_MAGIC} v{CHECKPOINT_VERSION}")?;
        writeln!(w, "tensors {}", self.len())?;
        for (id, name, t) in self.iter() {
            let frozen = if self.is_frozen(id) { " frozen" } else { "" };
            writeln!(w, "tensor {name} {} {}{frozen}", t.rows(), t.cols())?;
            for r in 0..t.rows() {
                let line: Vec<String> = t.row(r).iter().map(|v| v.to_string()).collect();
                writeln!(w, "{}", line.join(" "))?;
            }
        }
        w.flush()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
        let mut lines = BufReader::new(file).lines().enumerate();
        let parse_err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line: line + 1,
            message,
        };
        let mut next = |what: &str| -> Result<(usize, String)> {
            match lines.next() {
                Some((i, Ok(l))) => Ok((i, l)),
                Some((i, Err(e))) => Err(parse_err(i, e.to_string())),
                None => Err(parse_err(0, format!("unexpected end of file, expected {what}"))),
            }
        };

        let (i, header) = next("header")?;
        let expected = format!("{CHECKPOINT_MAGIC} v{CHECKPOINT_VERSION}");
        if header.trim() != expected {
            return Err(parse_err(
                i,
                format!("expected header '{expected}', got '{header}'"),
            ));
        }
        let (i, count_line) = next("tensor count")?;
        let count: usize = count_line
            .strip_prefix("tensors ")
            .and_then(|c| c.trim().parse().ok())
            .ok_or_else(|| parse_err(i, "expected 'tensors <count>'".into()))?;

        let mut set = ParamSet::new();
        for _ in 0..count {
            let (i, head) = next("tensor header")?;
            let fields: Vec<&str> = head.split_whitespace().collect();
            if fields.len() < 4 || fields[0] != "tensor" {
                return Err(parse_err(i, format!("bad tensor header '{head}'")));
            }
            let rows: usize = fields[2]
                .parse()
                .map_err(|_| parse_err(i, "bad row count".into()))?;
            let cols: usize = fields[3]
                .parse()
                .map_err(|_| parse_err(i, "bad column count".into()))?;
            let frozen = fields.get(4) == Some(&"frozen");
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                let (i, row) = next("tensor row")?;
                for tok in row.split_whitespace() {
                    data.push(
                        tok.parse::<f64>()
                            .map_err(|_| parse_err(i, format!("bad value '{tok}'")))?,
                    );
                }
            }
            let t = Tensor::new(rows, cols, data).map_err(|e| parse_err(i, e.to_string()))?;
            let id = set.insert(fields[1], t);
            set.set_frozen(id, frozen);
        }
        Ok(set)
    }
}
