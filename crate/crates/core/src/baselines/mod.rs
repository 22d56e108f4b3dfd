//! Static word and document embeddings: CBOW, GloVe, fastText and doc2vec.

mod cbow;
mod doc2vec;
mod fasttext;
mod glove;

pub use cbow::train_cbow;
pub use doc2vec::{infer_doc2vec, train_doc2vec};
pub use fasttext::{char_ngrams, train_fasttext};
pub use glove::{glove_weight, train_glove};

use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::checkpoint::Container;
use crate::corpus::Dataset;
use crate::error::{Error, Result};
use crate::seed::Rng;
use crate::tensor::ops::{axpy, dot, sigmoid};
use crate::tensor::Tensor;
use crate::text::{build_vocab, is_special, tokenize, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Cbow,
    Glove,
    Fasttext,
    Doc2vec,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 4] = [BaselineKind::Cbow, BaselineKind::Glove, BaselineKind::Fasttext, BaselineKind::Doc2vec];

    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::Cbow => "cbow",
            BaselineKind::Glove => "glove",
            BaselineKind::Fasttext => "fasttext",
            BaselineKind::Doc2vec => "doc2vec",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineHyperparams {
    pub dim: usize,
    pub window: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub negatives: usize,
    pub x_max: f64,
    pub alpha: f64,
    pub min_n: usize,
    pub max_n: usize,
    pub buckets: usize,
    pub min_count: usize,
    /// Passes over a document when inferring a doc2vec vector.
    pub infer_epochs: usize,
    pub seed: u64,
}

impl Default for BaselineHyperparams {
    fn default() -> Self {
        BaselineHyperparams {
            dim: 64,
            window: 4,
            epochs: 15,
            learning_rate: 0.025,
            negatives: 5,
            x_max: 100.0,
            alpha: 0.75,
            min_n: 3,
            max_n: 5,
            buckets: 2048,
            min_count: 1,
            infer_epochs: 20,
            seed: 0,
        }
    }
}

impl BaselineHyperparams {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::field("dim", "must be at least 1"));
        }
        if self.window == 0 {
            return Err(Error::field("window", "must be at least 1"));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::field("alpha", "must lie in (0, 1]"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::field("learning_rate", "must be positive"));
        }
        if !(self.x_max.is_finite() && self.x_max > 0.0) {
            return Err(Error::field("x_max", "must be positive"));
        }
        if self.min_count == 0 {
            return Err(Error::field("min_count", "must be at least 1"));
        }
        Ok(())
    }
}

/// A trained embedding table plus model-specific auxiliary tables.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub kind: BaselineKind,
    pub vocab: Vocabulary,
    pub hp: BaselineHyperparams,
    /// One vector per vocabulary id, `[V, d]`.
    pub words: Tensor,
    /// Named auxiliary tables (output vectors, n-gram buckets, doc vectors, ...).
    pub aux: Vec<(String, Tensor)>,
    /// Per-epoch training objective, when the model logs one.
    pub trace: Vec<f64>,
}

impl EmbeddingMatrix {
    pub fn dim(&self) -> usize {
        self.hp.dim
    }

    pub fn aux(&self, name: &str) -> Result<&Tensor> {
        self.aux
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Shape(format!("{} embedding has no `{name}` table", self.kind.name())))
    }

    /// Vector of a single token (fastText composes OOV tokens from n-grams).
    pub fn token_vector(&self, token: &str) -> Result<Vec<f64>> {
        match self.kind {
            BaselineKind::Fasttext => fasttext::token_vector(self, token),
            _ => Ok(self.words.row(self.vocab.id(token) as usize).to_vec()),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.words.is_finite() && self.aux.iter().all(|(_, t)| t.is_finite())
    }

    pub fn to_container(&self) -> Result<Container> {
        let vocab: Value = serde_json::from_str(&self.vocab.to_json())?;
        let mut c = Container::new(
            "embedding",
            json!({ "model": self.kind, "hp": self.hp, "vocab": vocab, "trace": self.trace }),
        );
        c.push("words", self.words.clone());
        for (n, t) in &self.aux {
            c.push(n.clone(), t.clone());
        }
        Ok(c)
    }

    pub fn from_container(mut c: Container) -> Result<Self> {
        c.expect_kind("embedding")?;
        let get = |k: &str| c.meta.get(k).cloned().ok_or_else(|| Error::Format(format!("header has no `{k}`")));
        let kind: BaselineKind = serde_json::from_value(get("model")?).map_err(|e| Error::Format(format!("model: {e}")))?;
        let hp: BaselineHyperparams = serde_json::from_value(get("hp")?).map_err(|e| Error::Format(format!("hp: {e}")))?;
        let vocab = Vocabulary::from_json(&get("vocab")?.to_string())?;
        let trace: Vec<f64> = serde_json::from_value(get("trace")?).map_err(|e| Error::Format(format!("trace: {e}")))?;
        let words = c.take("words", &[vocab.len(), hp.dim])?;
        let aux = c.tensors.drain(..).map(|t| (t.name, t.tensor)).collect();
        let m = EmbeddingMatrix { kind, vocab, hp, words, aux, trace };
        if !m.is_finite() {
            return Err(Error::Format("embedding holds non-finite values".into()));
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container()?.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_container(Container::load(path)?)
    }
}

/// Train the named baseline.
pub fn train_baseline(kind: BaselineKind, ds: &Dataset, hp: &BaselineHyperparams) -> Result<EmbeddingMatrix> {
    match kind {
        BaselineKind::Cbow => train_cbow(ds, hp),
        BaselineKind::Glove => train_glove(ds, hp),
        BaselineKind::Fasttext => train_fasttext(ds, hp),
        BaselineKind::Doc2vec => train_doc2vec(ds, hp),
    }
}

/// Mean token vector (UNK included) for word-level models, an inferred
/// vector for doc2vec. Empty text gives the zero vector for word-level models.
pub fn embed_document(m: &EmbeddingMatrix, text: &str) -> Result<Vec<f64>> {
    if m.kind == BaselineKind::Doc2vec {
        return infer_doc2vec(m, text);
    }
    let tokens = tokenize(text);
    let mut out = vec![0.0; m.dim()];
    if tokens.is_empty() {
        return Ok(out);
    }
    for t in &tokens {
        axpy(1.0, &m.token_vector(t)?, &mut out);
    }
    out.iter_mut().for_each(|v| *v /= tokens.len() as f64);
    Ok(out)
}

// ---- shared training pieces ----

pub(crate) fn prepare(ds: &Dataset, hp: &BaselineHyperparams) -> Result<(Vocabulary, Vec<Vec<u32>>)> {
    hp.validate()?;
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let vocab = build_vocab(ds, hp.min_count)?;
    let docs = ds.texts().map(|t| tokenize(t).iter().map(|w| vocab.id(w)).collect()).collect();
    Ok((vocab, docs))
}

/// word2vec-style init: uniform in ±0.5/d.
pub(crate) fn uniform_table(rows: usize, dim: usize, rng: &mut Rng) -> Tensor {
    let half = 0.5 / dim as f64;
    let data = (0..rows * dim).map(|_| rng.random_range(-half..half)).collect();
    Tensor { shape: vec![rows, dim], data }
}

/// Unigram^0.75 noise distribution over non-special ids.
pub(crate) struct NegSampler {
    dist: WeightedIndex<f64>,
}

impl NegSampler {
    pub(crate) fn new(counts: &[f64]) -> Result<Self> {
        let weights: Vec<f64> = counts
            .iter()
            .enumerate()
            .map(|(i, &c)| if is_special(i as u32) { 0.0 } else { c.powf(0.75) })
            .collect();
        let dist = WeightedIndex::new(&weights).map_err(|_| Error::precondition("corpus has no in-vocabulary tokens"))?;
        Ok(NegSampler { dist })
    }

    pub(crate) fn sample(&self, rng: &mut Rng) -> u32 {
        self.dist.sample(rng) as u32
    }
}

pub(crate) fn token_counts(vocab_len: usize, docs: &[Vec<u32>]) -> Vec<f64> {
    let mut counts = vec![0.0; vocab_len];
    docs.iter().flatten().for_each(|&id| counts[id as usize] += 1.0);
    counts
}

/// One negative-sampling step: `h` predicts `target` against `negatives`
/// noise ids. Updates `out` and accumulates d(h)·lr into `neu1e`. Returns the
/// logistic loss of the step.
#[allow(clippy::too_many_arguments)]
pub(crate) fn sgns_step(
    h: &[f64],
    target: u32,
    out: &mut Tensor,
    sampler: &NegSampler,
    negatives: usize,
    lr: f64,
    rng: &mut Rng,
    neu1e: &mut [f64],
) -> f64 {
    let mut loss = 0.0;
    for k in 0..=negatives {
        let (id, label) = if k == 0 {
            (target, 1.0)
        } else {
            let id = sampler.sample(rng);
            if id == target {
                continue;
            }
            (id, 0.0)
        };
        let row = out.row_mut(id as usize);
        let score = dot(h, row);
        let p = sigmoid(score);
        loss -= if label == 1.0 { p.max(1e-300).ln() } else { (1.0 - p).max(1e-300).ln() };
        let g = (label - p) * lr;
        axpy(g, row, neu1e);
        axpy(g, h, row);
    }
    loss
}

/// Linearly decayed learning rate, floored at 1e-4 of the start value.
pub(crate) fn decayed(lr0: f64, done: usize, total: usize) -> f64 {
    lr0 * (1.0 - done as f64 / total.max(1) as f64).max(1e-4)
}

/// Context ids around position `c` within `window`.
pub(crate) fn context(doc: &[u32], c: usize, window: usize) -> Vec<u32> {
    let lo = c.saturating_sub(window);
    let hi = (c + window + 1).min(doc.len());
    (lo..hi).filter(|&j| j != c).map(|j| doc[j]).collect()
}
