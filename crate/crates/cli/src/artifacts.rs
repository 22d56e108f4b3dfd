//! On-disk artifacts that live outside the core containers: the corpus
//! sidecar, feature matrices and run records.

use std::path::{Path, PathBuf};

use periloom::checkpoint::{write_atomic, Container};
use periloom::corpus::{load_dataset_with, CorpusSpec, Dataset, TaskId};
use periloom::predict::FeatureMatrix;
use periloom::tensor::Tensor;
use periloom::{Error, Result, TOOL_VERSION};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

/// Stamp carried by every artifact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub tool: String,
}

impl Provenance {
    pub fn new(config_hash: &str) -> Self {
        Provenance { config_hash: config_hash.to_string(), tool: TOOL_VERSION.to_string() }
    }

    pub fn with(&self, extra: Value) -> Value {
        let mut v = serde_json::to_value(self).expect("provenance serializes");
        if let (Value::Object(m), Value::Object(e)) = (&mut v, extra) {
            m.extend(e);
        }
        v
    }
}

/// `corpus.jsonl` → `corpus.meta.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("meta.json")
}

/// Task registry and generation spec stored next to a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusMeta {
    pub tasks: Vec<TaskId>,
    pub spec: Option<CorpusSpec>,
    pub n_docs: usize,
    pub content_hash: String,
    pub provenance: Provenance,
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse { line: e.line(), reason: format!("{}: {e}", path.display()) })
}

pub fn save_corpus(path: &Path, ds: &Dataset, spec: Option<&CorpusSpec>, prov: &Provenance) -> Result<()> {
    write_atomic(path, ds.to_jsonl().as_bytes())?;
    let meta = CorpusMeta {
        tasks: ds.tasks.clone(),
        spec: spec.cloned(),
        n_docs: ds.len(),
        content_hash: ds.content_hash(),
        provenance: prov.clone(),
    };
    write_json(&sidecar_path(path), &meta)
}

/// Load a dataset, taking the registry from its sidecar when present and
/// rejecting a file that no longer matches the sidecar's hash.
pub fn load_corpus(path: &Path) -> Result<Dataset> {
    let side = sidecar_path(path);
    if !side.exists() {
        return periloom::corpus::load_dataset(path);
    }
    let meta: CorpusMeta = read_json(&side)?;
    let ds = load_dataset_with(path, meta.tasks.clone())?;
    if ds.content_hash() != meta.content_hash {
        return Err(Error::Incompatible(format!(
            "{} does not match the content hash in {}",
            path.display(),
            side.display()
        )));
    }
    Ok(ds)
}

/// Document features aligned to dataset rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    pub matrix: FeatureMatrix,
    /// What produced the features, e.g. `cbow` or `model:<sha256>`.
    pub source: String,
    pub dataset_hash: String,
    pub provenance: Value,
}

impl Features {
    pub fn to_container(&self) -> Result<Container> {
        let m = &self.matrix;
        let mut c = Container::new(
            "features",
            json!({ "ids": m.ids, "source": self.source, "dataset": self.dataset_hash }),
        );
        c.push("x", Tensor::from_vec(&[m.rows, m.cols], m.data.clone())?);
        c.provenance = self.provenance.clone();
        Ok(c)
    }

    pub fn from_container(c: Container) -> Result<Self> {
        c.expect_kind("features")?;
        let field = |k: &str| c.meta.get(k).cloned().ok_or_else(|| Error::Format(format!("header has no `{k}`")));
        let ids: Vec<String> = serde_json::from_value(field("ids")?).map_err(|e| Error::Format(format!("ids: {e}")))?;
        let source = field("source")?.as_str().unwrap_or_default().to_string();
        let dataset_hash = field("dataset")?.as_str().unwrap_or_default().to_string();
        let x = c.tensor("x")?;
        if x.shape.len() != 2 || x.shape[0] != ids.len() {
            return Err(Error::Shape(format!("feature tensor {:?} for {} ids", x.shape, ids.len())));
        }
        let matrix = FeatureMatrix { rows: x.shape[0], cols: x.shape[1], data: x.data.clone(), ids };
        Ok(Features { matrix, source, dataset_hash, provenance: c.provenance.clone() })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(Container::load(path)?)
    }
}

/// Index of every artifact an `evaluate` run wrote, with content hashes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub provenance: Provenance,
    pub config: Value,
    pub tasks: Vec<String>,
    pub artifacts: Vec<ArtifactEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub file: String,
    pub sha256: String,
}

impl ArtifactEntry {
    pub fn of(dir: &Path, file: &str) -> Result<Self> {
        let bytes = std::fs::read(dir.join(file))?;
        Ok(ArtifactEntry { file: file.to_string(), sha256: periloom::checkpoint::sha256_hex(&bytes) })
    }
}
