//! Dataset schema, JSON-Lines persistence, corpus statistics, the synthetic
//! note generator and stratified fold assignment.

mod generate;
mod split;

pub use generate::{generate_corpus, signal_tokens, CorpusSpec, TaskSpec};
pub use split::{rarest_task, stratified_split, FoldAssignment};

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::checkpoint::{sha256_hex, write_atomic};
use crate::error::{Error, Result};
use crate::text::tokenize;

/// Which loss a task's head uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum TaskKind {
    BinaryClassification,
    MultiClass { classes: usize },
    Regression,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskId {
    pub name: String,
    pub kind: TaskKind,
}

impl TaskId {
    pub fn binary(name: &str) -> Self {
        TaskId { name: name.to_string(), kind: TaskKind::BinaryClassification }
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

/// Task names of the default registry, in registry order.
pub const DEFAULT_TASKS: [&str; 6] = ["death30", "dvt", "pe", "pneumonia", "aki", "delirium"];

pub fn default_registry() -> Vec<TaskId> {
    DEFAULT_TASKS.iter().map(|n| TaskId::binary(n)).collect()
}

/// One label slot. Binary tasks use `Negative`/`Positive`; multi-class tasks
/// use `Class`; regression tasks use `Value`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Label {
    Negative,
    Positive,
    Class(u32),
    Value(f64),
    Missing,
}

impl Label {
    pub fn is_missing(&self) -> bool {
        matches!(self, Label::Missing)
    }

    pub fn is_positive(&self) -> bool {
        matches!(self, Label::Positive)
    }

    /// Numeric target: 0/1 for binary, class index, or the regression value.
    pub fn target(&self) -> Option<f64> {
        match *self {
            Label::Negative => Some(0.0),
            Label::Positive => Some(1.0),
            Label::Class(c) => Some(c as f64),
            Label::Value(v) => Some(v),
            Label::Missing => None,
        }
    }

    fn to_json(self) -> Value {
        match self {
            Label::Negative => Value::from(0),
            Label::Positive => Value::from(1),
            Label::Class(c) => Value::from(c),
            Label::Value(v) => Value::from(v),
            Label::Missing => Value::Null,
        }
    }

    fn from_json(v: &Value, kind: TaskKind) -> std::result::Result<Label, String> {
        if v.is_null() {
            return Ok(Label::Missing);
        }
        match kind {
            TaskKind::BinaryClassification => match v.as_u64() {
                Some(0) => Ok(Label::Negative),
                Some(1) => Ok(Label::Positive),
                _ => Err(format!("binary label must be 0, 1 or null, got {v}")),
            },
            TaskKind::MultiClass { classes } => match v.as_u64() {
                Some(c) if (c as usize) < classes => Ok(Label::Class(c as u32)),
                _ => Err(format!("class label must be an integer below {classes}, got {v}")),
            },
            TaskKind::Regression => {
                v.as_f64().filter(|x| x.is_finite()).map(Label::Value).ok_or_else(|| format!("regression label must be a finite number, got {v}"))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClinicalNote {
    pub id: String,
    pub text: String,
    /// Aligned with the owning dataset's task registry.
    pub labels: Vec<Label>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub tasks: Vec<TaskId>,
    pub notes: Vec<ClinicalNote>,
}

impl Dataset {
    pub fn new(tasks: Vec<TaskId>) -> Self {
        Dataset { tasks, notes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.notes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.notes.is_empty()
    }

    pub fn task_index(&self, name: &str) -> Result<usize> {
        self.tasks.iter().position(|t| t.name == name).ok_or_else(|| Error::UnknownTask {
            name: name.to_string(),
            registry: self.registry_names(),
        })
    }

    pub fn registry_names(&self) -> String {
        self.tasks.iter().map(|t| t.name.as_str()).collect::<Vec<_>>().join(", ")
    }

    /// New dataset holding the given rows, in the given order.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset { tasks: self.tasks.clone(), notes: rows.iter().map(|&i| self.notes[i].clone()).collect() }
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.notes.iter().map(|n| n.text.as_str())
    }

    /// Labels of one task, in row order.
    pub fn labels(&self, task: usize) -> Vec<Label> {
        self.notes.iter().map(|n| n.labels[task]).collect()
    }

    /// Serialize to canonical JSON-Lines: keys in fixed order, labels sorted by task name.
    pub fn to_jsonl(&self) -> String {
        #[derive(Serialize)]
        struct Line<'a> {
            id: &'a str,
            text: &'a str,
            labels: BTreeMap<&'a str, Value>,
        }
        let mut out = String::new();
        for note in &self.notes {
            let labels = self.tasks.iter().zip(&note.labels).map(|(t, l)| (t.name.as_str(), l.to_json())).collect();
            let line = Line { id: &note.id, text: &note.text, labels };
            out.push_str(&serde_json::to_string(&line).expect("dataset line serializes"));
            out.push('\n');
        }
        out
    }

    /// Parse JSON-Lines against a task registry. Absent task keys are Missing.
    pub fn from_jsonl(reader: impl Read, tasks: Vec<TaskId>) -> Result<Dataset> {
        let mut ds = Dataset::new(tasks);
        for (i, line) in BufReader::new(reader).lines().enumerate() {
            let lineno = i + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let err = |reason: String| Error::Parse { line: lineno, reason };
            let v: Value = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
            let obj = v.as_object().ok_or_else(|| err("expected a JSON object".into()))?;
            let id = obj.get("id").and_then(Value::as_str).ok_or_else(|| err("missing string field `id`".into()))?;
            let text =
                obj.get("text").and_then(Value::as_str).ok_or_else(|| err("missing string field `text`".into()))?;
            if tokenize(text).is_empty() {
                return Err(err("`text` has no tokens".into()));
            }
            let labels_obj = obj
                .get("labels")
                .and_then(Value::as_object)
                .ok_or_else(|| err("missing object field `labels`".into()))?;
            let mut labels = vec![Label::Missing; ds.tasks.len()];
            for (key, value) in labels_obj {
                let t = ds.tasks.iter().position(|t| &t.name == key).ok_or_else(|| Error::UnknownTask {
                    name: key.clone(),
                    registry: ds.registry_names(),
                })?;
                labels[t] = Label::from_json(value, ds.tasks[t].kind).map_err(|r| err(format!("label `{key}`: {r}")))?;
            }
            ds.notes.push(ClinicalNote { id: id.to_string(), text: text.to_string(), labels });
        }
        Ok(ds)
    }

    pub fn content_hash(&self) -> String {
        sha256_hex(self.to_jsonl().as_bytes())
    }
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    load_dataset_with(path, default_registry())
}

pub fn load_dataset_with(path: impl AsRef<Path>, tasks: Vec<TaskId>) -> Result<Dataset> {
    Dataset::from_jsonl(std::fs::File::open(path)?, tasks)
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), ds.to_jsonl().as_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskStats {
    pub task: String,
    pub n_observed: usize,
    pub n_positive: usize,
    /// Positives over non-Missing labels; absent when nothing is observed.
    pub event_rate: Option<f64>,
    pub missing_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_docs: usize,
    pub vocab_size: usize,
    pub mean_word_len: f64,
    pub sd_word_len: f64,
    pub mean_vocab_len: f64,
    pub sd_vocab_len: f64,
    pub tasks: Vec<TaskStats>,
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Corpus summary. SDs are population SDs.
pub fn corpus_stats(ds: &Dataset) -> Result<CorpusStats> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut vocab = HashSet::new();
    let mut word_lens = Vec::with_capacity(ds.len());
    let mut vocab_lens = Vec::with_capacity(ds.len());
    for note in &ds.notes {
        let toks = tokenize(&note.text);
        word_lens.push(toks.len() as f64);
        let distinct: HashSet<&str> = toks.iter().map(String::as_str).collect();
        vocab_lens.push(distinct.len() as f64);
        vocab.extend(toks);
    }
    let (mean_word_len, sd_word_len) = mean_sd(&word_lens);
    let (mean_vocab_len, sd_vocab_len) = mean_sd(&vocab_lens);
    let tasks = ds
        .tasks
        .iter()
        .enumerate()
        .map(|(t, task)| {
            let observed = ds.notes.iter().filter(|n| !n.labels[t].is_missing()).count();
            let positive = ds.notes.iter().filter(|n| n.labels[t].is_positive()).count();
            TaskStats {
                task: task.name.clone(),
                n_observed: observed,
                n_positive: positive,
                event_rate: (observed > 0).then(|| positive as f64 / observed as f64),
                missing_rate: (ds.len() - observed) as f64 / ds.len() as f64,
            }
        })
        .collect();
    Ok(CorpusStats {
        n_docs: ds.len(),
        vocab_size: vocab.len(),
        mean_word_len,
        sd_word_len,
        mean_vocab_len,
        sd_vocab_len,
        tasks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn note(id: &str, text: &str, labels: Vec<Label>) -> ClinicalNote {
        ClinicalNote { id: id.into(), text: text.into(), labels }
    }

    fn tiny() -> Dataset {
        let mut ds = Dataset::new(default_registry());
        let l = |d: Label| vec![d, Label::Negative, Label::Negative, Label::Negative, Label::Negative, Label::Missing];
        ds.notes.push(note("a", "a b a", l(Label::Positive)));
        ds.notes.push(note("b", "c", l(Label::Negative)));
        ds.notes.push(note("c", "Left knee \"arthroplasty\"", l(Label::Missing)));
        ds
    }

    #[test]
    fn stats_hand_count() {
        let mut ds = tiny();
        ds.notes.truncate(2);
        let s = corpus_stats(&ds).unwrap();
        assert_eq!(s.vocab_size, 3);
        assert_eq!(s.mean_word_len, 2.0);
        assert_eq!(s.mean_vocab_len, 1.5);
        assert_eq!(s.tasks[0].event_rate, Some(0.5));
        assert_eq!(s.tasks[5].event_rate, None);
        assert_eq!(s.tasks[5].missing_rate, 1.0);
    }

    #[test]
    fn stats_single_token() {
        let mut ds = Dataset::new(default_registry());
        ds.notes.push(note("x", "x", vec![Label::Missing; 6]));
        let s = corpus_stats(&ds).unwrap();
        assert_eq!((s.mean_word_len, s.sd_word_len), (1.0, 0.0));
        assert_eq!((s.mean_vocab_len, s.sd_vocab_len), (1.0, 0.0));
        assert!(matches!(corpus_stats(&Dataset::new(default_registry())), Err(Error::EmptyDataset)));
    }

    #[test]
    fn jsonl_round_trip_is_canonical() {
        let ds = tiny();
        let text = ds.to_jsonl();
        let back = Dataset::from_jsonl(text.as_bytes(), default_registry()).unwrap();
        assert_eq!(back, ds);
        assert_eq!(back.to_jsonl(), text);
        assert!(text.lines().next().unwrap().contains("\"delirium\":null"));
    }

    #[test]
    fn jsonl_empty_and_errors() {
        let empty = Dataset::from_jsonl("".as_bytes(), default_registry()).unwrap();
        assert!(empty.is_empty());

        let bad = "{\"id\":\"1\",\"text\":\"x\",\"labels\":{}}\n{\"id\":\"2\",\"text\":\"y\"}\n";
        match Dataset::from_jsonl(bad.as_bytes(), default_registry()) {
            Err(Error::Parse { line, reason }) => {
                assert_eq!(line, 2);
                assert!(reason.contains("labels"));
            }
            other => panic!("{other:?}"),
        }

        let unknown = "{\"id\":\"1\",\"text\":\"x\",\"labels\":{\"sepsis\":1}}\n";
        match Dataset::from_jsonl(unknown.as_bytes(), default_registry()) {
            Err(Error::UnknownTask { name, registry }) => {
                assert_eq!(name, "sepsis");
                assert!(registry.contains("delirium"));
            }
            other => panic!("{other:?}"),
        }

        let garbage = "not json\n";
        assert!(matches!(Dataset::from_jsonl(garbage.as_bytes(), default_registry()), Err(Error::Parse { line: 1, .. })));
        let badlabel = "{\"id\":\"1\",\"text\":\"x\",\"labels\":{\"pe\":2}}\n";
        assert!(matches!(Dataset::from_jsonl(badlabel.as_bytes(), default_registry()), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn non_binary_registries_parse() {
        let tasks = vec![
            TaskId { name: "los".into(), kind: TaskKind::Regression },
            TaskId { name: "discharge".into(), kind: TaskKind::MultiClass { classes: 3 } },
        ];
        let text = "{\"id\":\"1\",\"text\":\"x y\",\"labels\":{\"discharge\":2,\"los\":4.5}}\n";
        let ds = Dataset::from_jsonl(text.as_bytes(), tasks.clone()).unwrap();
        assert_eq!(ds.notes[0].labels, vec![Label::Value(4.5), Label::Class(2)]);
        assert_eq!(Dataset::from_jsonl(ds.to_jsonl().as_bytes(), tasks).unwrap(), ds);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let ds = tiny();
        save_dataset(&ds, &path).unwrap();
        assert_eq!(load_dataset(&path).unwrap(), ds);
    }
}
