//! Documents, vocabularies, splits, and the synthetic corpus generator.
//!
//! Corpora are JSON-lines files. A [`Schema`] names which fields hold the
//! document id, the free text (concatenated in order), the typed metadata,
//! and the labels.

mod split;
mod synth;
mod vocab;

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde_json::{Map, Value};

pub use split::{split_corpus, CorpusSplit, Partition};
pub use synth::{generate_synthetic, SynthConfig};
pub use vocab::{Table, Vocabulary, UNK, UNK_ID};

use crate::error::{Error, Result};
use crate::taxonomy::{LabelHierarchy, LabelId};

/// Placed between consecutive non-empty text fields.
pub const SEPARATOR: &str = "[sep]";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Schema {
    pub id_field: String,
    pub text_fields: Vec<String>,
    pub metadata_fields: Vec<String>,
    pub labels_field: String,
}

impl Default for Schema {
    fn default() -> Self {
        Self {
            id_field: "id".into(),
            text_fields: vec!["title".into(), "abstract".into()],
            metadata_fields: vec!["venue".into(), "authors".into(), "references".into()],
            labels_field: "labels".into(),
        }
    }
}

/// A parsed but unresolved document: tokenized text per text field, raw
/// metadata instances per metadata field, label names.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawDocument {
    pub id: String,
    pub text: Vec<Vec<String>>,
    pub metadata: Vec<Vec<String>>,
    pub labels: Vec<String>,
}

impl RawDocument {
    /// Text fields concatenated in schema order, with [`SEPARATOR`] between
    /// non-empty fields.
    pub fn words(&self) -> impl Iterator<Item = &str> + '_ {
        let mut first = true;
        self.text.iter().filter(|f| !f.is_empty()).flat_map(move |field| {
            let sep = if first { None } else { Some(SEPARATOR) };
            first = false;
            sep.into_iter().chain(field.iter().map(String::as_str))
        })
    }

    pub fn to_json(&self, schema: &Schema) -> Value {
        let mut obj = Map::new();
        obj.insert(schema.id_field.clone(), Value::String(self.id.clone()));
        for (name, toks) in schema.text_fields.iter().zip(&self.text) {
            obj.insert(name.clone(), Value::String(toks.join(" ")));
        }
        for (name, insts) in schema.metadata_fields.iter().zip(&self.metadata) {
            obj.insert(
                name.clone(),
                Value::Array(insts.iter().cloned().map(Value::String).collect()),
            );
        }
        obj.insert(
            schema.labels_field.clone(),
            Value::Array(self.labels.iter().cloned().map(Value::String).collect()),
        );
        Value::Object(obj)
    }
}

/// Metadata token: type index (position in the schema) and instance id.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MetaToken {
    pub kind: u16,
    pub id: u32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Document {
    pub id: String,
    pub words: Vec<u32>,
    pub metadata: Vec<MetaToken>,
    /// Sorted, unique.
    pub labels: Vec<LabelId>,
}

/// Resolved documents sharing one vocabulary.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub docs: Vec<Document>,
    pub vocab: Vocabulary,
}

impl Corpus {
    /// Resolves raw documents against `vocab`. Unknown words and metadata
    /// become UNK; unknown labels are an error.
    pub fn resolve(
        raw: &[RawDocument],
        vocab: Vocabulary,
        hierarchy: Option<&LabelHierarchy>,
    ) -> Result<Self> {
        let mut docs = Vec::with_capacity(raw.len());
        let mut seen = HashSet::new();
        for r in raw {
            if !seen.insert(r.id.as_str()) {
                return Err(Error::Validation(format!("duplicate document id '{}'", r.id)));
            }
            let mut doc = resolve_inputs(r, &vocab)?;
            for l in &r.labels {
                if hierarchy.is_some_and(|h| h.is_removed(l)) {
                    continue;
                }
                let id = vocab.labels.get(l).ok_or_else(|| {
                    Error::Validation(format!("document '{}' has unknown label '{l}'", r.id))
                })?;
                doc.labels.push(id);
            }
            doc.labels.sort_unstable();
            doc.labels.dedup();
            if doc.labels.is_empty() {
                return Err(Error::Validation(format!("document '{}' has no labels", r.id)));
            }
            docs.push(doc);
        }
        let corpus = Self { docs, vocab };
        corpus.validate()?;
        Ok(corpus)
    }

    /// Resolves documents for prediction: labels are ignored, so unlabeled
    /// input is accepted.
    pub fn resolve_unlabeled(raw: &[RawDocument], vocab: Vocabulary) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut docs = Vec::with_capacity(raw.len());
        for r in raw {
            if !seen.insert(r.id.as_str()) {
                return Err(Error::Validation(format!("duplicate document id '{}'", r.id)));
            }
            docs.push(resolve_inputs(r, &vocab)?);
        }
        Ok(Self { docs, vocab })
    }

    /// Checks that every id in every document resolves in the vocabulary.
    pub fn validate(&self) -> Result<()> {
        for d in &self.docs {
            if let Some(w) = d.words.iter().find(|&&w| w as usize >= self.vocab.words.len()) {
                return Err(Error::Validation(format!(
                    "document '{}': word id {w} unresolved",
                    d.id
                )));
            }
            for m in &d.metadata {
                let ok = self
                    .vocab
                    .metadata
                    .get(m.kind as usize)
                    .is_some_and(|(_, t)| (m.id as usize) < t.len());
                if !ok {
                    return Err(Error::Validation(format!(
                        "document '{}': metadata {m:?} unresolved",
                        d.id
                    )));
                }
            }
            if let Some(l) = d.labels.iter().find(|&&l| l as usize >= self.vocab.labels.len()) {
                return Err(Error::Validation(format!(
                    "document '{}': label id {l} unresolved",
                    d.id
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn num_labels(&self) -> usize {
        self.vocab.labels.len()
    }

    /// Documents in the order of `ids`.
    pub fn select(&self, ids: &[String]) -> Result<Vec<&Document>> {
        let by_id: std::collections::HashMap<&str, &Document> =
            self.docs.iter().map(|d| (d.id.as_str(), d)).collect();
        ids.iter()
            .map(|id| {
                by_id
                    .get(id.as_str())
                    .copied()
                    .ok_or_else(|| Error::Validation(format!("unknown document id '{id}'")))
            })
            .collect()
    }
}

/// Words and metadata of `r` as ids, with no labels yet.
fn resolve_inputs(r: &RawDocument, vocab: &Vocabulary) -> Result<Document> {
    let words: Vec<u32> = r.words().map(|w| vocab.word_id(w)).collect();
    let mut metadata = Vec::new();
    for (k, insts) in r.metadata.iter().enumerate() {
        if k >= vocab.metadata.len() {
            return Err(Error::Validation(format!(
                "document '{}' has more metadata fields than the vocabulary",
                r.id
            )));
        }
        for inst in insts {
            metadata.push(MetaToken {
                kind: k as u16,
                id: vocab.metadata_id(k, inst),
            });
        }
    }
    if words.is_empty() && metadata.is_empty() {
        return Err(Error::Validation(format!(
            "document '{}' has neither words nor metadata",
            r.id
        )));
    }
    Ok(Document {
        id: r.id.clone(),
        words,
        metadata,
        labels: Vec::new(),
    })
}

/// Lowercases and splits on anything that is not alphanumeric or `_`.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '_'))
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn field_strings(v: &Value) -> std::result::Result<Vec<String>, String> {
    match v {
        Value::Null => Ok(Vec::new()),
        Value::String(s) => Ok(vec![s.clone()]),
        Value::Number(n) => Ok(vec![n.to_string()]),
        Value::Array(items) => items
            .iter()
            .map(|i| match i {
                Value::String(s) => Ok(s.clone()),
                Value::Number(n) => Ok(n.to_string()),
                other => Err(format!("unsupported array element {other}")),
            })
            .collect(),
        other => Err(format!("unsupported value {other}")),
    }
}

/// Parses one JSON line into a raw document.
pub fn parse_document(line: &str, schema: &Schema) -> std::result::Result<RawDocument, String> {
    parse_line(line, schema, true)
}

fn parse_line(line: &str, schema: &Schema, require_labels: bool) -> std::result::Result<RawDocument, String> {
    let value: Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let obj = value.as_object().ok_or("line is not a JSON object")?;
    let id = match obj.get(&schema.id_field) {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Number(n)) => n.to_string(),
        _ => return Err(format!("missing or invalid '{}' field", schema.id_field)),
    };
    let mut text = Vec::with_capacity(schema.text_fields.len());
    for f in &schema.text_fields {
        let parts = obj.get(f).map(field_strings).transpose()?.unwrap_or_default();
        text.push(parts.iter().flat_map(|p| tokenize(p)).collect());
    }
    let mut metadata = Vec::with_capacity(schema.metadata_fields.len());
    for f in &schema.metadata_fields {
        let insts = obj.get(f).map(field_strings).transpose()?.unwrap_or_default();
        metadata.push(insts.into_iter().filter(|s| !s.is_empty()).collect());
    }
    let labels = match obj.get(&schema.labels_field) {
        Some(v @ (Value::Array(_) | Value::String(_))) => field_strings(v)?,
        None if !require_labels => Vec::new(),
        _ => return Err(format!("missing or invalid '{}' field", schema.labels_field)),
    };
    Ok(RawDocument {
        id,
        text,
        metadata,
        labels,
    })
}

/// Reads a JSON-lines corpus without resolving ids. Rejects malformed lines
/// (with their line number) and duplicate document ids.
pub fn read_raw(path: &Path, schema: &Schema) -> Result<Vec<RawDocument>> {
    read_lines(path, schema, true)
}

/// Like [`read_raw`], but a missing labels field reads as no labels.
pub fn read_unlabeled(path: &Path, schema: &Schema) -> Result<Vec<RawDocument>> {
    read_lines(path, schema, false)
}

fn read_lines(path: &Path, schema: &Schema, require_labels: bool) -> Result<Vec<RawDocument>> {
    let file = fs::File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let doc = parse_line(&line, schema, require_labels).map_err(|message| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        })?;
        if !seen.insert(doc.id.clone()) {
            return Err(Error::Validation(format!(
                "duplicate document id '{}' at line {}",
                doc.id,
                i + 1
            )));
        }
        docs.push(doc);
    }
    Ok(docs)
}

pub fn write_raw(path: &Path, docs: &[RawDocument], schema: &Schema) -> Result<()> {
    let mut out = Vec::new();
    for d in docs {
        serde_json::to_writer(&mut out, &d.to_json(schema)).expect("serialize to vec");
        out.write_all(b"\n").expect("write to vec");
    }
    fs::write(path, out).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Loads a corpus and builds its vocabulary from every document in it.
pub fn load_corpus(
    path: &Path,
    schema: &Schema,
    hierarchy: Option<&LabelHierarchy>,
    min_count: u64,
) -> Result<Corpus> {
    let raw = read_raw(path, schema)?;
    let vocab = Vocabulary::build(&raw, schema, min_count, hierarchy)?;
    Corpus::resolve(&raw, vocab, hierarchy)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(lines: &[&str]) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        fs::write(&path, lines.join("\n")).unwrap();
        (dir, path)
    }

    #[test]
    fn direct_field_mapping() {
        let (_d, p) = write(&[
            r#"{"id":"d1","title":"graph web","venue":"WWW","authors":["a1"],"references":[],"labels":["L3"]}"#,
        ]);
        let c = load_corpus(&p, &Schema::default(), None, 1).unwrap();
        let d = &c.docs[0];
        assert_eq!(d.words.len(), 2);
        assert_eq!(d.metadata.len(), 2);
        assert_eq!(d.labels.len(), 1);
    }

    #[test]
    fn text_fields_joined_with_separator() {
        let raw = parse_document(
            r#"{"id":"x","title":"A b","abstract":"c","labels":["l"]}"#,
            &Schema::default(),
        )
        .unwrap();
        let words: Vec<&str> = raw.words().collect();
        assert_eq!(words, vec!["a", "b", SEPARATOR, "c"]);
    }

    #[test]
    fn missing_labels_names_the_line() {
        let (_d, p) = write(&[
            r#"{"id":"d1","title":"x","labels":["a"]}"#,
            r#"{"id":"d2","title":"y"}"#,
        ]);
        match load_corpus(&p, &Schema::default(), None, 1) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 2);
                assert!(message.contains("labels"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unlabeled_input_resolves_for_prediction() {
        let (_d, p) = write(&[
            r#"{"id":"d1","title":"graph x","venue":"WWW","labels":["a"]}"#,
            r#"{"id":"d2","title":"graph"}"#,
        ]);
        let train = load_corpus(&p, &Schema::default(), None, 1);
        assert!(train.is_err());
        let raw = read_unlabeled(&p, &Schema::default()).unwrap();
        let vocab = Vocabulary::build(&raw[..1], &Schema::default(), 1, None).unwrap();
        let c = Corpus::resolve_unlabeled(&raw, vocab).unwrap();
        assert_eq!(c.docs[1].words, c.docs[0].words[..1]);
        assert!(c.docs.iter().all(|d| d.labels.is_empty()));
    }

    #[test]
    fn malformed_json_names_the_line() {
        let (_d, p) = write(&[r#"{"id":"d1","title":"x","labels":["a"]}"#, "{oops"]);
        assert!(matches!(
            load_corpus(&p, &Schema::default(), None, 1),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let (_d, p) = write(&[
            r#"{"id":"d1","title":"x","labels":["a"]}"#,
            r#"{"id":"d1","title":"y","labels":["a"]}"#,
        ]);
        let err = load_corpus(&p, &Schema::default(), None, 1).unwrap_err();
        assert!(matches!(err, Error::Validation(m) if m.contains("d1")));
    }

    #[test]
    fn unknown_label_with_hierarchy() {
        let (_d, p) = write(&[r#"{"id":"d1","title":"x","labels":["Z"]}"#]);
        let h = LabelHierarchy::from_edges(&[("B", "A")], &[]).unwrap();
        assert!(matches!(
            load_corpus(&p, &Schema::default(), Some(&h), 1),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn zero_labels_rejected() {
        let (_d, p) = write(&[r#"{"id":"d1","title":"x","labels":[]}"#]);
        assert!(matches!(
            load_corpus(&p, &Schema::default(), None, 1),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn removed_root_is_dropped_from_documents() {
        let (_d, p) = write(&[r#"{"id":"d1","title":"x","labels":["A","B"]}"#]);
        let h = LabelHierarchy::from_edges(&[("B", "A"), ("C", "A")], &[])
            .unwrap()
            .without_label("A")
            .unwrap();
        let c = load_corpus(&p, &Schema::default(), Some(&h), 1).unwrap();
        assert_eq!(c.docs[0].labels, vec![h.id("B").unwrap()]);
    }

    #[test]
    fn empty_document_rejected() {
        let (_d, p) = write(&[r#"{"id":"d1","title":"","labels":["a"]}"#]);
        assert!(load_corpus(&p, &Schema::default(), None, 1).is_err());
    }

    #[test]
    fn vocabulary_min_count_and_tables() {
        let raw = vec![
            parse_document(
                r#"{"id":"1","title":"a a b","venue":"V","authors":["x"],"labels":["l"]}"#,
                &Schema::default(),
            )
            .unwrap(),
            parse_document(
                r#"{"id":"2","title":"a c","venue":"W","authors":["x","y"],"labels":["l"]}"#,
                &Schema::default(),
            )
            .unwrap(),
        ];
        let all = Vocabulary::build(&raw, &Schema::default(), 1, None).unwrap();
        assert_eq!(all.words.len(), 4); // unk, a, b, c
        let pruned = Vocabulary::build(&raw, &Schema::default(), 2, None).unwrap();
        assert_eq!(pruned.word_id("b"), UNK_ID);
        assert_ne!(pruned.word_id("a"), UNK_ID);
        let venue = all.metadata_kind("venue").unwrap();
        let authors = all.metadata_kind("authors").unwrap();
        assert_ne!(venue, authors);
        assert_eq!(all.metadata_table(venue).len(), 3);
        assert_eq!(all.metadata_table(authors).len(), 3);
        assert!(Vocabulary::build(&raw, &Schema::default(), 0, None).is_err());
    }

    #[test]
    fn unseen_metadata_resolves_to_unk() {
        let schema = Schema::default();
        let train =
            vec![parse_document(r#"{"id":"1","title":"a","venue":"V","labels":["l"]}"#, &schema).unwrap()];
        let test =
            vec![parse_document(r#"{"id":"2","title":"a","venue":"NEW","labels":["l"]}"#, &schema).unwrap()];
        let vocab = Vocabulary::build(&train, &schema, 1, None).unwrap();
        let c = Corpus::resolve(&test, vocab, None).unwrap();
        assert_eq!(c.docs[0].metadata, vec![MetaToken { kind: 0, id: UNK_ID }]);
    }

    #[test]
    fn vocabulary_dump_roundtrip() {
        let (_d, p) = write(&[
            r#"{"id":"d1","title":"graph web","venue":"WWW","authors":["a1","a2"],"labels":["L3","L1"]}"#,
        ]);
        let c = load_corpus(&p, &Schema::default(), None, 1).unwrap();
        let out = p.with_extension("vocab");
        c.vocab.save(&out).unwrap();
        assert_eq!(Vocabulary::load(&out).unwrap(), c.vocab);
    }
}
