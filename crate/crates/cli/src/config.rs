use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use periloom::baselines::{BaselineHyperparams, BaselineKind};
use periloom::corpus::CorpusSpec;
use periloom::eval::{Scorer, TuneScope};
use periloom::finetune::{FineTuneConfig, Strategy};
use periloom::predict::{GbtParams, PredictorParams};
use periloom::seed;
use periloom::transformer::{ArchConfig, Variant};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

/// Transformer shape; the vocabulary size comes from the pretraining corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSettings {
    pub variant: Variant,
    pub layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub dropout: f64,
    pub tie_embeddings: bool,
    pub nsp_head: bool,
}

impl Default for ModelSettings {
    fn default() -> Self {
        let a = ArchConfig::toy(Variant::Encoder, 0, 0);
        ModelSettings {
            variant: a.variant,
            layers: a.layers,
            d_model: a.d_model,
            heads: a.heads,
            d_ff: a.d_ff,
            max_len: a.max_len,
            dropout: a.dropout,
            tie_embeddings: a.tie_embeddings,
            nsp_head: a.nsp_head,
        }
    }
}

impl ModelSettings {
    pub fn arch(&self, vocab_size: usize, seed: u64) -> ArchConfig {
        ArchConfig {
            variant: self.variant,
            layers: self.layers,
            d_model: self.d_model,
            heads: self.heads,
            d_ff: self.d_ff,
            max_len: self.max_len,
            vocab_size,
            dropout: self.dropout,
            seed,
            tie_embeddings: self.tie_embeddings,
            nsp_head: self.nsp_head,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub k_outer: usize,
    pub k_inner: usize,
    pub tune: TuneScope,
    /// Tasks to evaluate; empty means every binary task of the dataset.
    pub tasks: Vec<String>,
    pub strategies: Vec<Strategy>,
    pub baselines: Vec<BaselineKind>,
    /// Predictor grid searched by the inner loop.
    pub grid: Vec<PredictorParams>,
    /// Also score semi-supervised and foundation models through their own heads.
    pub heads: bool,
    pub threshold: f64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            k_outer: 5,
            k_inner: 3,
            tune: TuneScope::PredictorOnly,
            tasks: Vec::new(),
            strategies: Strategy::ALL.to_vec(),
            baselines: vec![BaselineKind::Cbow],
            grid: vec![
                PredictorParams::Gbt(GbtParams::default()),
                PredictorParams::Gbt(GbtParams { max_depth: 2, ..Default::default() }),
            ],
            heads: false,
            threshold: 0.5,
        }
    }
}

/// Declarative run description. Component seeds are derived from `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Existing dataset; when absent the corpus is generated from `corpus`.
    pub dataset: Option<PathBuf>,
    pub corpus: CorpusSpec,
    /// Separate pretraining corpus; when absent pretraining uses the dataset texts.
    pub pretrain_corpus: Option<CorpusSpec>,
    pub model: ModelSettings,
    pub pretrain: FineTuneConfig,
    pub finetune: FineTuneConfig,
    pub baseline: BaselineHyperparams,
    pub predictor: PredictorParams,
    pub eval: EvalSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut pretrain_corpus = CorpusSpec::planted(2000, 0.3, 1.0, 0);
        pretrain_corpus.id_prefix = "pre".into();
        RunConfig {
            seed: 0,
            output_dir: PathBuf::from("periloom-run"),
            dataset: None,
            corpus: CorpusSpec::planted(1000, 0.1, 0.8, 0),
            pretrain_corpus: Some(pretrain_corpus),
            model: ModelSettings::default(),
            pretrain: FineTuneConfig { epochs: 3, batch_size: 32, learning_rate: 1e-3, ..Default::default() },
            finetune: FineTuneConfig {
                strategy: Strategy::Foundation,
                epochs: 3,
                batch_size: 32,
                learning_rate: 1e-3,
                ..Default::default()
            },
            baseline: BaselineHyperparams::default(),
            predictor: PredictorParams::Gbt(GbtParams::default()),
            eval: EvalSettings::default(),
        }
    }
}

impl RunConfig {
    /// Overwrite every component seed with one derived from the master seed.
    pub fn derive_seeds(&mut self) {
        let s = self.seed;
        self.corpus.seed = seed::derive(s, "corpus", &[]);
        if let Some(p) = &mut self.pretrain_corpus {
            p.seed = seed::derive(s, "pretrain-corpus", &[]);
        }
        self.pretrain.seed = seed::derive(s, "pretrain", &[]);
        self.finetune.seed = seed::derive(s, "finetune", &[]);
        self.baseline.seed = seed::derive(s, "baseline", &[]);
        if let PredictorParams::Rf(p) = &mut self.predictor {
            p.seed = seed::derive(s, "rf", &[]);
        }
        for (i, g) in self.eval.grid.iter_mut().enumerate() {
            if let PredictorParams::Rf(p) = g {
                p.seed = seed::derive(s, "rf-grid", &[i as u64]);
            }
        }
    }

    pub fn validate(&self) -> periloom::Result<()> {
        use periloom::Error;
        if self.dataset.is_none() {
            self.corpus.validate()?;
        }
        if let Some(p) = &self.pretrain_corpus {
            p.validate()?;
        }
        self.pretrain.validate()?;
        self.finetune.validate()?;
        self.baseline.validate()?;
        self.model.arch(periloom::text::N_SPECIAL as usize + 1, 0).validate()?;
        if let Some(d) = &self.dataset {
            if !d.exists() {
                return Err(Error::field("dataset", format!("{} does not exist", d.display())));
            }
        }
        if self.eval.k_outer < 2 || self.eval.k_inner < 2 {
            return Err(Error::field("eval.k_outer", "fold counts must be at least 2"));
        }
        if self.eval.grid.is_empty() {
            return Err(Error::field("eval.grid", "grid is empty"));
        }
        if !(0.0..=1.0).contains(&self.eval.threshold) {
            return Err(Error::field("eval.threshold", "must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn scorer_for(&self, strategy: Strategy) -> Option<Scorer> {
        (self.eval.heads && matches!(strategy, Strategy::SemiSupervised | Strategy::Foundation)).then_some(Scorer::Head)
    }

    /// Hex SHA-256 of the resolved configuration.
    pub fn hash(&self) -> String {
        periloom::checkpoint::sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.output_dir.join(name)
    }
}

/// Where a resolved value came from, in precedence order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Flag,
    File,
    Env,
    Default,
}

impl Source {
    fn name(self) -> &'static str {
        match self {
            Source::Flag => "flag",
            Source::File => "file",
            Source::Env => "env",
            Source::Default => "default",
        }
    }
}

/// A configuration assembled as default < env < file < flags.
pub struct Resolved {
    pub config: RunConfig,
    file: Value,
    flags: Vec<(String, Value)>,
    env_seed: bool,
}

fn merge(base: &mut Value, top: &Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, t) => *b = t.clone(),
    }
}

fn set_path(root: &mut Value, path: &str, value: Value) {
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    for p in &parts[..parts.len() - 1] {
        if !cur.get(*p).is_some_and(Value::is_object) {
            cur[*p] = Value::Object(Map::new());
        }
        cur = cur.get_mut(*p).unwrap();
    }
    cur[parts[parts.len() - 1]] = value;
}

fn has_path(root: &Value, path: &str) -> bool {
    let mut cur = root;
    for p in path.split('.') {
        match cur.get(p) {
            Some(v) => cur = v,
            None => return false,
        }
    }
    true
}

fn leaves(v: &Value, prefix: &str, out: &mut Vec<(String, Value)>) {
    match v {
        Value::Object(m) if !m.is_empty() => {
            for (k, v) in m {
                let p = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                leaves(v, &p, out);
            }
        }
        _ => out.push((prefix.to_string(), v.clone())),
    }
}

impl Resolved {
    /// `flags` are (dotted path, JSON value) overrides.
    pub fn load(file: Option<&Path>, flags: Vec<(String, Value)>) -> Result<Resolved> {
        let file_value = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str::<Value>(&text).map_err(|e| {
                    periloom::Error::field("config", format!("{}: {e}", p.display()))
                })?
            }
            None => Value::Object(Map::new()),
        };
        if !file_value.is_object() {
            return Err(periloom::Error::field("config", "top level must be a JSON object").into());
        }
        let mut value = serde_json::to_value(RunConfig::default())?;
        let env_seed = match std::env::var("PERILOOM_SEED") {
            Ok(s) => {
                let seed: u64 = s
                    .trim()
                    .parse()
                    .map_err(|_| periloom::Error::field("PERILOOM_SEED", format!("`{s}` is not an unsigned integer")))?;
                value["seed"] = Value::from(seed);
                true
            }
            Err(_) => false,
        };
        merge(&mut value, &file_value);
        for (path, v) in &flags {
            set_path(&mut value, path, v.clone());
        }
        let mut config: RunConfig = serde_json::from_value(value).map_err(|e| periloom::Error::field("config", e.to_string()))?;
        config.derive_seeds();
        config.validate()?;
        Ok(Resolved { config, file: file_value, flags, env_seed })
    }

    pub fn source(&self, path: &str) -> Source {
        if self.flags.iter().any(|(p, _)| path == p || path.starts_with(&format!("{p}."))) {
            Source::Flag
        } else if has_path(&self.file, path) {
            Source::File
        } else if self.env_seed && path == "seed" {
            Source::Env
        } else {
            Source::Default
        }
    }

    /// Every resolved leaf with its source, one per line.
    pub fn explain(&self) -> String {
        let mut out = Vec::new();
        leaves(&serde_json::to_value(&self.config).expect("config serializes"), "", &mut out);
        let mut s = String::from("# precedence: flag > file > env > default; component seeds derive from `seed`\n");
        for (path, v) in out {
            let src = if path.ends_with(".seed") && path != "seed" { "derived" } else { self.source(&path).name() };
            s.push_str(&format!("{path} = {v}  [{src}]\n"));
        }
        s
    }
}
