//! Training loops for pretraining and the four fine-tuning strategies.
//!
//! Every strategy runs through one loop whose objective per batch is
//! `[L_self]·w_self + Σᵢ λᵢ·Lᵢ`, so the strategies differ only in their
//! weights and heads.

mod head;
mod optim;

pub use head::{bce, check_labels, output_dim, task_loss, Dense, HeadSpec, TaskHead};
pub use optim::AdamW;

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::checkpoint::Container;
use crate::corpus::{Dataset, Label, TaskId};
use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::ops::axpy;
use crate::tensor::Tensor;
use crate::text::{apply_mlm_mask, encode, TokenSeq, Vocabulary};
use crate::transformer::{loss_and_grad, ArchConfig, Example, ModelParams, PooledObjective, Variant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    PretrainedOnly,
    #[default]
    SelfSupervised,
    SemiSupervised,
    Foundation,
}

impl Strategy {
    pub const ALL: [Strategy; 4] =
        [Strategy::PretrainedOnly, Strategy::SelfSupervised, Strategy::SemiSupervised, Strategy::Foundation];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::PretrainedOnly => "pretrained_only",
            Strategy::SelfSupervised => "self_supervised",
            Strategy::SemiSupervised => "semi_supervised",
            Strategy::Foundation => "foundation",
        }
    }
}

/// Self-supervised objective; must match the model variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelfObjective {
    Mlm,
    Causal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FineTuneConfig {
    pub strategy: Strategy,
    /// Task for semi-supervised fine-tuning.
    pub task: Option<String>,
    /// Tasks for foundation fine-tuning.
    pub tasks: Vec<String>,
    pub lambda: f64,
    /// Per-task weights for foundation fine-tuning; defaults to `lambda` each.
    pub lambda_vec: Option<Vec<f64>>,
    pub include_self_loss: bool,
    /// Explicit self-supervised objective; `None` uses the variant's own.
    pub objective: Option<SelfObjective>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub warmup_frac: f64,
    pub mlm_rate: f64,
    /// Head hidden widths; `None` means one hidden layer of width d.
    pub head_hidden: Option<Vec<usize>>,
    /// Apply the architecture's dropout during training.
    pub dropout: bool,
    pub seed: u64,
}

impl Default for FineTuneConfig {
    fn default() -> Self {
        FineTuneConfig {
            strategy: Strategy::SelfSupervised,
            task: None,
            tasks: Vec::new(),
            lambda: 1.0,
            lambda_vec: None,
            include_self_loss: true,
            objective: None,
            epochs: 3,
            batch_size: 16,
            learning_rate: 3e-4,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            warmup_frac: 0.05,
            mlm_rate: 0.15,
            head_hidden: None,
            dropout: true,
            seed: 0,
        }
    }
}

impl FineTuneConfig {
    pub fn validate(&self) -> Result<()> {
        let nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !nonneg(self.lambda) {
            return Err(Error::field("lambda", "must be finite and non-negative"));
        }
        if let Some(v) = &self.lambda_vec {
            if let Some(i) = v.iter().position(|&x| !nonneg(x)) {
                return Err(Error::field(format!("lambda_vec[{i}]"), "must be finite and non-negative"));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::field("batch_size", "must be at least 1"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::field("learning_rate", "must be positive"));
        }
        if !nonneg(self.weight_decay) {
            return Err(Error::field("weight_decay", "must be finite and non-negative"));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::field(name, "must lie in [0, 1)"));
            }
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return Err(Error::field("eps", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.warmup_frac) {
            return Err(Error::field("warmup_frac", "must lie in [0, 1]"));
        }
        if !(self.mlm_rate > 0.0 && self.mlm_rate <= 1.0) {
            return Err(Error::field("mlm_rate", "must lie in (0, 1]"));
        }
        Ok(())
    }

    /// Resolved (task names, weights, self weight) for this strategy.
    fn objective_weights(&self) -> Result<(Vec<String>, Vec<f64>, f64)> {
        match self.strategy {
            Strategy::PretrainedOnly => Ok((vec![], vec![], 0.0)),
            Strategy::SelfSupervised => Ok((vec![], vec![], 1.0)),
            Strategy::SemiSupervised => {
                let task = self.task.clone().ok_or_else(|| Error::field("task", "semi-supervised needs a task"))?;
                Ok((vec![task], vec![self.lambda], 1.0))
            }
            Strategy::Foundation => {
                let m = self.tasks.len();
                if m == 0 {
                    return Err(Error::field("tasks", "foundation fine-tuning needs at least one task"));
                }
                let weights = match &self.lambda_vec {
                    Some(v) if v.len() != m => {
                        return Err(Error::field("lambda_vec", format!("has {} entries for {m} tasks", v.len())))
                    }
                    Some(v) => v.clone(),
                    None => vec![self.lambda; m],
                };
                Ok((self.tasks.clone(), weights, if self.include_self_loss { 1.0 } else { 0.0 }))
            }
        }
    }
}

/// `[L_self]·include_self + Σ λᵢLᵢ`
pub fn combined_loss(l_self: f64, losses: &[f64], lambdas: &[f64], include_self: bool) -> Result<f64> {
    if losses.len() != lambdas.len() {
        return Err(Error::Shape(format!("{} task losses for {} weights", losses.len(), lambdas.len())));
    }
    if !l_self.is_finite() || losses.iter().chain(lambdas).any(|v| !v.is_finite()) {
        return Err(Error::precondition("combined_loss inputs must be finite"));
    }
    let sup: f64 = losses.iter().zip(lambdas).map(|(l, w)| w * l).sum();
    Ok(if include_self { l_self + sup } else { sup })
}

/// A transformer body with its vocabulary and zero or more task heads.
#[derive(Debug, Clone, PartialEq)]
pub struct FineTunedModel {
    pub params: ModelParams,
    pub vocab: Vocabulary,
    pub heads: Vec<TaskHead>,
    pub provenance: Value,
}

impl FineTunedModel {
    pub fn new(params: ModelParams, vocab: Vocabulary) -> Result<Self> {
        if params.config.vocab_size != vocab.len() {
            return Err(Error::Incompatible(format!(
                "model vocabulary size {} differs from tokenizer size {}",
                params.config.vocab_size,
                vocab.len()
            )));
        }
        Ok(FineTunedModel { params, vocab, heads: Vec::new(), provenance: Value::Null })
    }

    pub fn head(&self, task: &str) -> Option<&TaskHead> {
        self.heads.iter().find(|h| h.task.name == task)
    }

    pub fn embed(&self, text: &str) -> Result<Vec<f64>> {
        crate::transformer::extract_embedding(&self.params, &self.vocab, text)
    }

    pub fn embed_all<'a>(&self, texts: impl IntoIterator<Item = &'a str>) -> Result<Vec<Vec<f64>>> {
        texts.into_iter().map(|t| self.embed(t)).collect()
    }

    pub fn to_container(&self) -> Result<Container> {
        let vocab: Value = serde_json::from_str(&self.vocab.to_json())?;
        let heads: Vec<HeadSpec> = self.heads.iter().map(TaskHead::spec).collect();
        let mut c = Container::new("model", json!({ "arch": self.params.config, "vocab": vocab, "heads": heads }));
        for (name, t) in self.params.named() {
            c.push(name, t.clone());
        }
        for h in &self.heads {
            for (name, t) in h.named() {
                c.push(name, t.clone());
            }
        }
        c.provenance = self.provenance.clone();
        Ok(c)
    }

    pub fn from_container(mut c: Container) -> Result<Self> {
        c.expect_kind("model")?;
        let field = |k: &str| c.meta.get(k).cloned().ok_or_else(|| Error::Format(format!("header has no `{k}`")));
        let arch: ArchConfig = serde_json::from_value(field("arch")?).map_err(|e| Error::Format(format!("arch: {e}")))?;
        let vocab = Vocabulary::from_json(&field("vocab")?.to_string())?;
        let specs: Vec<HeadSpec> =
            serde_json::from_value(field("heads")?).map_err(|e| Error::Format(format!("heads: {e}")))?;
        let params = ModelParams::from_tensors(arch, &mut c)?;
        let mut heads = Vec::with_capacity(specs.len());
        for spec in &specs {
            let mut h = TaskHead::from_spec(spec)?;
            let names: Vec<String> = h.named().into_iter().map(|(n, _)| n).collect();
            for (name, slot) in names.iter().zip(h.tensors_mut()) {
                let shape = slot.shape.clone();
                *slot = c.take(name, &shape)?;
            }
            heads.push(h);
        }
        if let Some(extra) = c.tensors.first() {
            return Err(Error::Shape(format!("checkpoint has unexpected tensor `{}`", extra.name)));
        }
        let mut m = FineTunedModel::new(params, vocab)?;
        m.heads = heads;
        m.provenance = c.provenance;
        Ok(m)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.to_container()?.to_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::from_container(Container::from_bytes(bytes)?)
    }
}

pub fn save_model(model: &FineTunedModel, path: impl AsRef<Path>) -> Result<()> {
    model.to_container()?.save(path)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<FineTunedModel> {
    FineTunedModel::from_container(Container::load(path)?)
}

/// Per-epoch mean losses of one training run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub total: Vec<f64>,
    pub self_loss: Vec<f64>,
}

struct HeadObjective<'a> {
    heads: &'a [TaskHead],
    grads: &'a mut [TaskHead],
    weights: &'a [f64],
    /// `labels[i][row]` for head i.
    labels: Vec<Vec<Label>>,
    counts: Vec<usize>,
}

impl PooledObjective for HeadObjective<'_> {
    fn loss_grad(&mut self, row: usize, pooled: &[f64], d_pooled: &mut [f64]) -> f64 {
        let mut total = 0.0;
        for (i, head) in self.heads.iter().enumerate() {
            let label = &self.labels[i][row];
            if label.is_missing() {
                continue;
            }
            let (out, acts) = head.forward_cached(pooled);
            let (loss, mut g) = task_loss(head.task.kind, &out, label).expect("label checked non-missing");
            let scale = self.weights[i] / self.counts[i] as f64;
            g.iter_mut().for_each(|v| *v *= scale);
            let dx = head.backward(&acts, &g, &mut self.grads[i]);
            axpy(1.0, &dx, d_pooled);
            total += scale * loss;
        }
        total
    }
}

/// Per-batch objective and gradients for a body plus heads, exposed for
/// gradient checks and masking tests. Rows are `(example, labels per head)`.
pub fn batch_loss_and_grad(
    params: &ModelParams,
    heads: &[TaskHead],
    batch: &[Example],
    labels: &[Vec<Label>],
    self_weight: f64,
    weights: &[f64],
    dropout_seed: Option<u64>,
) -> Result<(f64, ModelParams, Vec<TaskHead>)> {
    if heads.len() != weights.len() || heads.len() != labels.len() {
        return Err(Error::Shape(format!("{} heads, {} weights, {} label columns", heads.len(), weights.len(), labels.len())));
    }
    if let Some(h) = heads.iter().find(|h| h.input_dim() != params.config.d_model) {
        return Err(Error::Incompatible(format!("head `{}` expects input {}", h.task.name, h.input_dim())));
    }
    if labels.iter().any(|col| col.len() != batch.len()) {
        return Err(Error::Shape("label column length differs from batch size".into()));
    }
    let mut head_grads: Vec<TaskHead> = heads.iter().map(TaskHead::zeros_like).collect();
    let counts: Vec<usize> = labels.iter().map(|col| col.iter().filter(|l| !l.is_missing()).count()).collect();
    let (parts, grads) = if heads.is_empty() {
        loss_and_grad(params, batch, self_weight, None, dropout_seed)?
    } else {
        let mut obj = HeadObjective { heads, grads: &mut head_grads, weights, labels: labels.to_vec(), counts };
        loss_and_grad(params, batch, self_weight, Some(&mut obj), dropout_seed)?
    };
    Ok((parts.total, grads, head_grads))
}

fn self_example(seq: &TokenSeq, variant: Variant, vocab_size: usize, rate: f64, mask_seed: u64) -> Result<Example> {
    match variant {
        Variant::Encoder => Ok(Example::masked(&apply_mlm_mask(seq, vocab_size, rate, mask_seed)?)),
        Variant::Decoder => Ok(Example::causal(seq)),
    }
}

/// Shared training loop: updates `model` in place and returns its trace.
fn train(
    model: &mut FineTunedModel,
    ds: &Dataset,
    cfg: &FineTuneConfig,
    self_weight: f64,
    task_names: &[String],
    weights: &[f64],
) -> Result<TrainTrace> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let arch = model.params.config.clone();
    if let Some(obj) = cfg.objective {
        let own = match arch.variant {
            Variant::Encoder => SelfObjective::Mlm,
            Variant::Decoder => SelfObjective::Causal,
        };
        if obj != own {
            return Err(Error::Incompatible(format!("{:?} objective requested for a {:?} model", obj, arch.variant)));
        }
    }
    let mut label_cols = Vec::with_capacity(task_names.len());
    for name in task_names {
        let t = ds.task_index(name)?;
        let col = ds.labels(t);
        check_labels(&ds.tasks[t], &col)?;
        if col.iter().all(Label::is_missing) {
            return Err(Error::precondition(format!("task `{name}` has no non-missing labels")));
        }
        label_cols.push(col);
    }
    // Heads: keep existing ones for these tasks, create the rest.
    let hidden = cfg.head_hidden.clone().unwrap_or_else(|| vec![arch.d_model]);
    let mut heads = Vec::with_capacity(task_names.len());
    for name in task_names {
        let task: TaskId = ds.tasks[ds.task_index(name)?].clone();
        match model.head(name) {
            Some(h) if h.task == task => heads.push(h.clone()),
            _ => heads.push(TaskHead::new(task, arch.d_model, &hidden, cfg.seed)?),
        }
    }

    let seqs: Vec<TokenSeq> =
        ds.texts().map(|t| encode(t, &model.vocab, arch.max_len, arch.variant.style())).collect::<Result<_>>()?;
    let n = ds.len();
    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    let total_steps = steps_per_epoch * cfg.epochs;
    let warmup = ((cfg.warmup_frac * total_steps as f64).ceil() as usize).max(1);
    let mut opt = AdamW::new(cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay);
    let use_dropout = cfg.dropout && arch.dropout > 0.0;
    let mut trace = TrainTrace::default();
    let mut step = 0usize;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut seed::rng(cfg.seed, "epoch-order", &[epoch as u64]));
        let (mut tot, mut slf) = (0.0, 0.0);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = chunk
                .iter()
                .map(|&r| {
                    let mask_seed = seed::derive(cfg.seed, "mlm", &[epoch as u64, r as u64]);
                    self_example(&seqs[r], arch.variant, arch.vocab_size, cfg.mlm_rate, mask_seed)
                })
                .collect::<Result<Vec<_>>>()?;
            let labels: Vec<Vec<Label>> = label_cols.iter().map(|col| chunk.iter().map(|&r| col[r]).collect()).collect();
            let dropout_seed = use_dropout.then(|| seed::derive(cfg.seed, "dropout-step", &[step as u64]));

            let mut head_grads: Vec<TaskHead> = heads.iter().map(TaskHead::zeros_like).collect();
            let counts: Vec<usize> = labels.iter().map(|c| c.iter().filter(|l| !l.is_missing()).count()).collect();
            let has_sup = counts.iter().any(|&c| c > 0);
            let (parts, grads) = if has_sup {
                let mut obj = HeadObjective { heads: &heads, grads: &mut head_grads, weights, labels, counts };
                loss_and_grad(&model.params, &batch, self_weight, Some(&mut obj), dropout_seed)?
            } else {
                loss_and_grad(&model.params, &batch, self_weight, None, dropout_seed)?
            };
            tot += parts.total;
            slf += parts.self_loss;

            let lr = cfg.learning_rate * ((step + 1) as f64 / warmup as f64).min(1.0);
            let mut params: Vec<&mut Tensor> = model.params.tensors_mut();
            params.extend(heads.iter_mut().flat_map(TaskHead::tensors_mut));
            let mut grad_refs: Vec<&Tensor> = grads.named().into_iter().map(|(_, t)| t).collect();
            grad_refs.extend(head_grads.iter().flat_map(|h| h.named().into_iter().map(|(_, t)| t)));
            opt.step(params, grad_refs, lr);
            step += 1;
        }
        trace.total.push(tot / steps_per_epoch as f64);
        trace.self_loss.push(slf / steps_per_epoch as f64);
    }
    if !model.params.is_finite() {
        return Err(Error::precondition("training diverged (non-finite parameters)"));
    }
    // Heads of other tasks are kept; configured tasks get their trained heads.
    model.heads.retain(|h| !task_names.contains(&h.task.name));
    model.heads.extend(heads);
    Ok(trace)
}

fn provenance(base: &FineTunedModel, ds: &Dataset, cfg: &FineTuneConfig) -> Result<Value> {
    let base_bytes = base.params.to_container().to_bytes()?;
    Ok(json!({
        "base": crate::checkpoint::sha256_hex(&base_bytes),
        "config": cfg,
        "corpus": ds.content_hash(),
        "tool": crate::TOOL_VERSION,
    }))
}

/// Train a fresh model on the self-supervised objective only.
pub fn pretrain(arch: &ArchConfig, vocab: &Vocabulary, ds: &Dataset, cfg: &FineTuneConfig) -> Result<(FineTunedModel, TrainTrace)> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let params = ModelParams::init(arch)?;
    let mut model = FineTunedModel::new(params, vocab.clone())?;
    let trace = train(&mut model, ds, cfg, 1.0, &[], &[])?;
    model.provenance = json!({
        "base": "init",
        "config": cfg,
        "corpus": ds.content_hash(),
        "tool": crate::TOOL_VERSION,
    });
    Ok((model, trace))
}

/// Run the strategy named in `cfg`.
pub fn finetune(base: &FineTunedModel, ds: &Dataset, cfg: &FineTuneConfig) -> Result<(FineTunedModel, TrainTrace)> {
    let (tasks, weights, self_weight) = cfg.objective_weights()?;
    let mut model = base.clone();
    let trace = if cfg.strategy == Strategy::PretrainedOnly {
        cfg.validate()?;
        TrainTrace::default()
    } else {
        train(&mut model, ds, cfg, self_weight, &tasks, &weights)?
    };
    model.provenance = provenance(base, ds, cfg)?;
    Ok((model, trace))
}

pub fn finetune_self_supervised(base: &FineTunedModel, ds: &Dataset, cfg: &FineTuneConfig) -> Result<(FineTunedModel, TrainTrace)> {
    finetune(base, ds, &FineTuneConfig { strategy: Strategy::SelfSupervised, ..cfg.clone() })
}

pub fn finetune_semi_supervised(
    base: &FineTunedModel,
    ds: &Dataset,
    task: &str,
    cfg: &FineTuneConfig,
) -> Result<(FineTunedModel, TrainTrace)> {
    finetune(base, ds, &FineTuneConfig { strategy: Strategy::SemiSupervised, task: Some(task.to_string()), ..cfg.clone() })
}

pub fn finetune_foundation(
    base: &FineTunedModel,
    ds: &Dataset,
    tasks: &[String],
    cfg: &FineTuneConfig,
) -> Result<(FineTunedModel, TrainTrace)> {
    finetune(base, ds, &FineTuneConfig { strategy: Strategy::Foundation, tasks: tasks.to_vec(), ..cfg.clone() })
}

/// Mean self-supervised loss over a dataset with deterministic masks and no dropout.
pub fn eval_self_loss(model: &FineTunedModel, ds: &Dataset, mlm_rate: f64, seed: u64) -> Result<f64> {
    let arch = &model.params.config;
    let batch = ds
        .texts()
        .enumerate()
        .map(|(i, t)| {
            let seq = encode(t, &model.vocab, arch.max_len, arch.variant.style())?;
            self_example(&seq, arch.variant, arch.vocab_size, mlm_rate, seed::derive(seed, "eval-mlm", &[i as u64]))
        })
        .collect::<Result<Vec<_>>>()?;
    crate::transformer::loss_self(&model.params, &batch)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn combined_loss_arithmetic() {
        assert_eq!(combined_loss(2.0, &[1.0, 3.0], &[1.0, 0.0], true).unwrap(), 3.0);
        assert_eq!(combined_loss(2.0, &[1.0, 3.0], &[1.0, 1.0], false).unwrap(), 4.0);
        assert_eq!(combined_loss(9.0, &[2.0, 2.0], &[0.5, 0.5], false).unwrap(), 2.0);
        assert!(combined_loss(1.0, &[1.0], &[1.0, 2.0], true).is_err());
    }

    #[test]
    fn config_validation_names_fields() {
        let bad = FineTuneConfig { lambda: -1.0, ..Default::default() };
        assert!(matches!(bad.validate(), Err(Error::InvalidField { field, .. }) if field == "lambda"));
        let bad = FineTuneConfig { strategy: Strategy::Foundation, tasks: vec!["a".into()], lambda_vec: Some(vec![1.0, 1.0]), ..Default::default() };
        assert!(bad.objective_weights().is_err());
        let f = FineTuneConfig { strategy: Strategy::Foundation, tasks: vec!["a".into(), "b".into()], ..Default::default() };
        assert_eq!(f.objective_weights().unwrap().1, vec![1.0, 1.0]);
    }
}
