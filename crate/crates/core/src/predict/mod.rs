//! Downstream predictors over document embeddings.

mod forest;
mod gbt;
mod linear;
mod tree;

pub use forest::{train_rf, ForestModel, RfParams};
pub use gbt::{leaf_weight, logistic_loss, split_gain, train_gbt, train_gbt_traced, GbtModel, GbtParams};
pub use linear::{train_logreg, LinearModel, LogregParams};
pub use tree::{Node, Tree};

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::checkpoint::Container;
use crate::corpus::Label;
use crate::error::{Error, Result};
use crate::finetune::FineTunedModel;

/// Dense row-major features with aligned row ids.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
    pub ids: Vec<String>,
}

impl FeatureMatrix {
    pub fn new(vectors: Vec<Vec<f64>>, ids: Vec<String>) -> Result<Self> {
        if vectors.len() != ids.len() {
            return Err(Error::Shape(format!("{} feature rows for {} ids", vectors.len(), ids.len())));
        }
        let cols = vectors.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(vectors.len() * cols);
        for (i, v) in vectors.iter().enumerate() {
            if v.len() != cols {
                return Err(Error::Shape(format!("row {i} has {} columns, expected {cols}", v.len())));
            }
            if let Some(j) = v.iter().position(|x| !x.is_finite()) {
                return Err(Error::precondition(format!("feature row {i}, column {j} is not finite")));
            }
            data.extend_from_slice(v);
        }
        Ok(FeatureMatrix { rows: vectors.len(), cols, data, ids })
    }

    /// Rows without ids (named by position).
    pub fn from_rows(vectors: Vec<Vec<f64>>) -> Result<Self> {
        let ids = (0..vectors.len()).map(|i| i.to_string()).collect();
        Self::new(vectors, ids)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn select(&self, rows: &[usize]) -> FeatureMatrix {
        let mut data = Vec::with_capacity(rows.len() * self.cols);
        rows.iter().for_each(|&r| data.extend_from_slice(self.row(r)));
        FeatureMatrix { rows: rows.len(), cols: self.cols, data, ids: rows.iter().map(|&r| self.ids[r].clone()).collect() }
    }
}

pub(crate) fn check_binary(x: &FeatureMatrix, y: &[f64]) -> Result<()> {
    if x.rows != y.len() {
        return Err(Error::Shape(format!("{} feature rows for {} labels", x.rows, y.len())));
    }
    if y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::precondition("labels must be 0 or 1"));
    }
    let pos = y.iter().filter(|&&v| v == 1.0).count();
    if y.len() < 2 || pos == 0 || pos == y.len() {
        return Err(Error::precondition(format!("need both classes to train ({pos} positives of {})", y.len())));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PredictorParams {
    Gbt(GbtParams),
    Logreg(LogregParams),
    Rf(RfParams),
}

impl PredictorParams {
    pub fn name(&self) -> &'static str {
        match self {
            PredictorParams::Gbt(_) => "gbt",
            PredictorParams::Logreg(_) => "logreg",
            PredictorParams::Rf(_) => "rf",
        }
    }

    /// Default parameters for a predictor name (`gbt`, `logreg`, `rf`).
    pub fn default_for(name: &str) -> Result<Self> {
        match name {
            "gbt" | "xgboost" => Ok(PredictorParams::Gbt(GbtParams::default())),
            "logreg" => Ok(PredictorParams::Logreg(LogregParams::default())),
            "rf" => Ok(PredictorParams::Rf(RfParams::default())),
            other => Err(Error::field("predictor", format!("unknown predictor `{other}` (expected gbt, logreg or rf)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Predictor {
    Gbt(GbtModel),
    Logreg(LinearModel),
    Rf(ForestModel),
}

impl Predictor {
    pub fn dim(&self) -> usize {
        match self {
            Predictor::Gbt(m) => m.dim,
            Predictor::Logreg(m) => m.weights.len(),
            Predictor::Rf(m) => m.dim,
        }
    }

    pub fn to_container(&self) -> Result<Container> {
        let mut c = Container::new("predictor", json!({ "model": serde_json::to_value(self)? }));
        if let Predictor::Logreg(m) = self {
            // Weights are also written as a tensor so they are readable without JSON.
            c.push("weights", crate::tensor::Tensor::from_vec(&[m.weights.len()], m.weights.clone())?);
        }
        Ok(c)
    }

    pub fn from_container(c: Container) -> Result<Self> {
        c.expect_kind("predictor")?;
        let v = c.meta.get("model").cloned().ok_or_else(|| Error::Format("header has no `model`".into()))?;
        let p: Predictor = serde_json::from_value(v).map_err(|e| Error::Format(format!("predictor: {e}")))?;
        if let Predictor::Logreg(m) = &p {
            if c.tensor("weights")?.data != m.weights {
                return Err(Error::Format("logistic weights disagree with header".into()));
            }
        }
        Ok(p)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container()?.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_container(Container::load(path)?)
    }
}

/// Binary 0/1 targets of the non-Missing rows, with their row indices.
pub fn labelled_rows(labels: &[Label]) -> Result<(Vec<usize>, Vec<f64>)> {
    let mut rows = Vec::new();
    let mut y = Vec::new();
    for (i, l) in labels.iter().enumerate() {
        match l {
            Label::Missing => {}
            Label::Negative => {
                rows.push(i);
                y.push(0.0);
            }
            Label::Positive => {
                rows.push(i);
                y.push(1.0);
            }
            other => return Err(Error::precondition(format!("row {i}: predictors need binary labels, got {other:?}"))),
        }
    }
    Ok((rows, y))
}

/// Fit on the rows whose label is not Missing.
pub fn train_predictor(params: &PredictorParams, x: &FeatureMatrix, labels: &[Label]) -> Result<Predictor> {
    if labels.len() != x.rows {
        return Err(Error::Shape(format!("{} feature rows for {} labels", x.rows, labels.len())));
    }
    let (rows, y) = labelled_rows(labels)?;
    let xs = x.select(&rows);
    Ok(match params {
        PredictorParams::Gbt(p) => Predictor::Gbt(train_gbt(&xs, &y, p)?),
        PredictorParams::Logreg(p) => Predictor::Logreg(train_logreg(&xs, &y, p)?),
        PredictorParams::Rf(p) => Predictor::Rf(train_rf(&xs, &y, p)?),
    })
}

pub fn predict_proba(model: &Predictor, x: &FeatureMatrix) -> Result<Vec<f64>> {
    if x.rows > 0 && x.cols != model.dim() {
        return Err(Error::Shape(format!("model expects {} features, got {}", model.dim(), x.cols)));
    }
    Ok((0..x.rows)
        .map(|i| {
            let r = x.row(i);
            match model {
                Predictor::Gbt(m) => m.predict_row(r),
                Predictor::Logreg(m) => m.predict_row(r),
                Predictor::Rf(m) => m.predict_row(r),
            }
        })
        .collect())
}

/// Scores from a fine-tuned model's own task head: embed → head → sigmoid.
pub fn head_proba<'a>(model: &FineTunedModel, task: &str, texts: impl IntoIterator<Item = &'a str>) -> Result<Vec<f64>> {
    let head = model
        .head(task)
        .ok_or_else(|| Error::Incompatible(format!("model has no head for task `{task}`")))?;
    if head.task.kind != crate::corpus::TaskKind::BinaryClassification {
        return Err(Error::Incompatible(format!("head `{task}` is not binary")));
    }
    texts.into_iter().map(|t| Ok(head.predict(&model.embed(t)?)[0])).collect()
}
