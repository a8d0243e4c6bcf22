use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use super::{RawDocument, Schema};
use crate::error::{Error, Result};
use crate::taxonomy::LabelHierarchy;

pub const UNK: &str = "<unk>";
pub const UNK_ID: u32 = 0;

/// One surface-form table with contiguous ids.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Table {
    forms: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, u32>,
}

impl Table {
    fn with_unk() -> Self {
        let mut t = Self::default();
        t.push(UNK, 0);
        t
    }

    fn push(&mut self, form: &str, count: u64) -> u32 {
        let id = self.forms.len() as u32;
        self.forms.push(form.to_string());
        self.counts.push(count);
        self.index.insert(form.to_string(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.forms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forms.is_empty()
    }

    pub fn get(&self, form: &str) -> Option<u32> {
        self.index.get(form).copied()
    }

    pub fn form(&self, id: u32) -> &str {
        &self.forms[id as usize]
    }

    pub fn count(&self, id: u32) -> u64 {
        self.counts[id as usize]
    }

    pub fn forms(&self) -> &[String] {
        &self.forms
    }

    fn write(&self, out: &mut Vec<u8>, header: &str) {
        writeln!(out, "# {header}").expect("write to vec");
        for (id, (form, count)) in self.forms.iter().zip(&self.counts).enumerate() {
            writeln!(out, "{form}\t{id}\t{count}").expect("write to vec");
        }
    }
}

/// Word, per-type metadata, and label tables. Word and metadata tables
/// reserve id 0 for [`UNK`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    pub words: Table,
    pub metadata: Vec<(String, Table)>,
    pub labels: Table,
}

impl Vocabulary {
    /// Builds tables from `docs` in first-appearance order. Words seen fewer
    /// than `min_count` times are left out and resolve to the word UNK. When
    /// a hierarchy is given, label ids follow the hierarchy's ids.
    pub fn build(
        docs: &[RawDocument],
        schema: &Schema,
        min_count: u64,
        hierarchy: Option<&LabelHierarchy>,
    ) -> Result<Self> {
        if min_count < 1 {
            return Err(Error::Argument("min_count must be at least 1".into()));
        }
        if docs.is_empty() {
            return Err(Error::Argument(
                "cannot build a vocabulary from no documents".into(),
            ));
        }

        let mut word_order: Vec<&str> = Vec::new();
        let mut word_counts: HashMap<&str, u64> = HashMap::new();
        for d in docs {
            for w in d.words() {
                let c = word_counts.entry(w).or_insert_with(|| {
                    word_order.push(w);
                    0
                });
                *c += 1;
            }
        }
        let mut words = Table::with_unk();
        let mut unk_count = 0;
        for w in word_order {
            let c = word_counts[w];
            if c >= min_count {
                words.push(w, c);
            } else {
                unk_count += c;
            }
        }
        words.counts[0] = unk_count;

        let mut metadata = Vec::with_capacity(schema.metadata_fields.len());
        for (k, field) in schema.metadata_fields.iter().enumerate() {
            let mut table = Table::with_unk();
            for d in docs {
                for inst in &d.metadata[k] {
                    match table.get(inst) {
                        Some(id) => table.counts[id as usize] += 1,
                        None => {
                            table.push(inst, 1);
                        }
                    }
                }
            }
            metadata.push((field.clone(), table));
        }

        let mut labels = Table::default();
        if let Some(h) = hierarchy {
            for name in h.names() {
                labels.push(name, 0);
            }
        }
        for d in docs {
            for l in &d.labels {
                if hierarchy.is_some_and(|h| h.is_removed(l)) {
                    continue;
                }
                match labels.get(l) {
                    Some(id) => labels.counts[id as usize] += 1,
                    None if hierarchy.is_some() => {
                        return Err(Error::Validation(format!(
                            "document '{}' has label '{l}' missing from the hierarchy",
                            d.id
                        )))
                    }
                    None => {
                        labels.push(l, 1);
                    }
                }
            }
        }
        Ok(Self {
            words,
            metadata,
            labels,
        })
    }

    pub fn metadata_table(&self, kind: usize) -> &Table {
        &self.metadata[kind].1
    }

    pub fn metadata_kind(&self, name: &str) -> Option<usize> {
        self.metadata.iter().position(|(n, _)| n == name)
    }

    pub fn word_id(&self, w: &str) -> u32 {
        self.words.get(w).unwrap_or(UNK_ID)
    }

    pub fn metadata_id(&self, kind: usize, inst: &str) -> u32 {
        self.metadata[kind].1.get(inst).unwrap_or(UNK_ID)
    }

    /// Plain-text dump: a `# section` header per table, then
    /// `form<TAB>id<TAB>frequency` lines.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        self.words.write(&mut out, "words");
        for (name, table) in &self.metadata {
            table.write(&mut out, &format!("metadata {name}"));
        }
        self.labels.write(&mut out, "labels");
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
        let mut words = None;
        let mut metadata = Vec::new();
        let mut labels = None;
        let mut current: Option<(String, Table)> = None;
        let mut finish = |section: Option<(String, Table)>| {
            if let Some((name, table)) = section {
                if name == "words" {
                    words = Some(table);
                } else if name == "labels" {
                    labels = Some(table);
                } else if let Some(kind) = name.strip_prefix("metadata ") {
                    metadata.push((kind.to_string(), table));
                }
            }
        };
        for (i, line) in text.lines().enumerate() {
            if let Some(header) = line.strip_prefix("# ") {
                finish(current.take());
                current = Some((header.to_string(), Table::default()));
                continue;
            }
            let (_, table) = current
                .as_mut()
                .ok_or_else(|| err(i + 1, "entry before any section header".into()))?;
            let fields: Vec<&str> = line.split('\t').collect();
            let [form, id, count] = fields.as_slice() else {
                return Err(err(
                    i + 1,
                    format!("expected 3 tab-separated fields, got '{line}'"),
                ));
            };
            let id: usize = id.parse().map_err(|_| err(i + 1, format!("bad id '{id}'")))?;
            if id != table.len() {
                return Err(err(
                    i + 1,
                    format!("ids must be contiguous; expected {}", table.len()),
                ));
            }
            if table.get(form).is_some() {
                return Err(err(i + 1, format!("duplicate surface form '{form}'")));
            }
            let count = count
                .parse()
                .map_err(|_| err(i + 1, format!("bad frequency '{count}'")))?;
            table.push(form, count);
        }
        finish(current.take());
        Ok(Self {
            words: words.ok_or_else(|| err(0, "missing '# words' section".into()))?,
            metadata,
            labels: labels.ok_or_else(|| err(0, "missing '# labels' section".into()))?,
        })
    }
}
