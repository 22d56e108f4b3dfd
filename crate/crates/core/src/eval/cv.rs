use serde::{Deserialize, Serialize};

use super::metrics::MetricSet;
use super::report::FoldRecord;
use crate::baselines::{embed_document, train_baseline, BaselineHyperparams, BaselineKind, EmbeddingMatrix};
use crate::corpus::{stratified_split, Dataset, FoldAssignment, Label, TaskKind};
use crate::error::{Error, Result};
use crate::finetune::{finetune, FineTuneConfig, FineTunedModel, Strategy};
use crate::predict::{head_proba, predict_proba, train_predictor, FeatureMatrix, Predictor, PredictorParams};
use crate::seed;

/// Which stages the inner loop re-fits per grid point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TuneScope {
    /// Features are fit once per outer fold; the inner loop tunes the predictor.
    #[default]
    PredictorOnly,
    /// Every inner fold re-fits features and predictor.
    FullPipeline,
}

/// How document features are produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum FeatureSpec {
    Baseline { kind: BaselineKind, hp: BaselineHyperparams },
    /// Fine-tune the supplied base model (the strategy lives in the config).
    Transformer { finetune: FineTuneConfig },
}

impl FeatureSpec {
    /// Short name for reports: the baseline kind or the fine-tuning strategy.
    pub fn label(&self) -> &'static str {
        match self {
            FeatureSpec::Baseline { kind, .. } => kind.name(),
            FeatureSpec::Transformer { finetune } => finetune.strategy.name(),
        }
    }
}

/// Where scores come from once features are fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scorer {
    #[default]
    Predictor,
    /// The fine-tuned model's own task head (semi-supervised or foundation).
    Head,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Feature grid; more than one entry needs `tune = full_pipeline`.
    pub features: Vec<FeatureSpec>,
    /// Predictor grid (ignored by the head scorer).
    pub predictors: Vec<PredictorParams>,
    #[serde(default)]
    pub scorer: Scorer,
    #[serde(default)]
    pub tune: TuneScope,
    #[serde(default = "half")]
    pub threshold: f64,
}

fn half() -> f64 {
    0.5
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.features.is_empty() {
            return Err(Error::field("features", "grid is empty"));
        }
        if self.scorer == Scorer::Predictor && self.predictors.is_empty() {
            return Err(Error::field("predictors", "grid is empty"));
        }
        if self.features.len() > 1 && self.tune == TuneScope::PredictorOnly {
            return Err(Error::field("features", "a feature grid needs tune = full_pipeline"));
        }
        if self.scorer == Scorer::Head {
            for f in &self.features {
                match f {
                    FeatureSpec::Transformer { finetune }
                        if matches!(finetune.strategy, Strategy::SemiSupervised | Strategy::Foundation) => {}
                    _ => return Err(Error::field("scorer", "head scoring needs semi-supervised or foundation fine-tuning")),
                }
            }
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::field("threshold", "must lie in [0, 1]"));
        }
        Ok(())
    }

    fn grid(&self) -> Vec<(usize, Option<usize>)> {
        match self.scorer {
            Scorer::Head => (0..self.features.len()).map(|f| (f, None)).collect(),
            Scorer::Predictor => (0..self.features.len())
                .flat_map(|f| (0..self.predictors.len()).map(move |p| (f, Some(p))))
                .collect(),
        }
    }

    fn describe(&self, point: (usize, Option<usize>)) -> String {
        let f = &self.features[point.0];
        let feat = serde_json::to_string(f).unwrap_or_default();
        match point.1 {
            Some(p) => format!("features={feat};predictor={}", serde_json::to_string(&self.predictors[p]).unwrap_or_default()),
            None => format!("features={feat};head"),
        }
    }

    /// The predictor column of a report: predictor name or `head`.
    pub fn predictor_label(&self) -> &'static str {
        match self.scorer {
            Scorer::Head => "head",
            Scorer::Predictor => self.predictors.first().map_or("none", PredictorParams::name),
        }
    }
}

/// Fitted document featurizer.
#[derive(Debug, Clone)]
pub enum Featurizer {
    Baseline(EmbeddingMatrix),
    Model(FineTunedModel),
}

impl Featurizer {
    pub fn embed<'a>(&self, texts: impl IntoIterator<Item = &'a str>) -> Result<Vec<Vec<f64>>> {
        texts
            .into_iter()
            .map(|t| match self {
                Featurizer::Baseline(m) => embed_document(m, t),
                Featurizer::Model(m) => m.embed(t),
            })
            .collect()
    }
}

/// Fit features on `train` only.
pub fn fit_features(train: &Dataset, spec: &FeatureSpec, base: Option<&FineTunedModel>) -> Result<Featurizer> {
    match spec {
        FeatureSpec::Baseline { kind, hp } => Ok(Featurizer::Baseline(train_baseline(*kind, train, hp)?)),
        FeatureSpec::Transformer { finetune: cfg } => {
            let base = base.ok_or_else(|| Error::field("base", "transformer features need a base model"))?;
            Ok(Featurizer::Model(finetune(base, train, cfg)?.0))
        }
    }
}

/// A fitted pipeline: features plus a predictor or a task head.
#[derive(Debug, Clone)]
pub struct FittedPipeline {
    pub task: String,
    pub featurizer: Featurizer,
    pub predictor: Option<Predictor>,
}

impl FittedPipeline {
    pub fn score<'a>(&self, texts: impl IntoIterator<Item = &'a str>) -> Result<Vec<f64>> {
        match (&self.predictor, &self.featurizer) {
            (Some(p), f) => predict_proba(p, &FeatureMatrix::from_rows(f.embed(texts)?)?),
            (None, Featurizer::Model(m)) => head_proba(m, &self.task, texts),
            (None, Featurizer::Baseline(_)) => Err(Error::field("scorer", "baseline features need a predictor")),
        }
    }
}

/// Fit one grid point on `train`.
pub fn fit_pipeline(
    train: &Dataset,
    task: &str,
    base: Option<&FineTunedModel>,
    features: &FeatureSpec,
    predictor: Option<&PredictorParams>,
) -> Result<FittedPipeline> {
    let t = train.task_index(task)?;
    let featurizer = fit_features(train, features, base)?;
    let predictor = match predictor {
        Some(p) => {
            let x = FeatureMatrix::from_rows(featurizer.embed(train.texts())?)?;
            Some(train_predictor(p, &x, &train.labels(t))?)
        }
        None => None,
    };
    Ok(FittedPipeline { task: task.to_string(), featurizer, predictor })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OuterFold {
    pub fold: usize,
    pub test_ids: Vec<String>,
    pub scores: Vec<f64>,
    pub labels: Vec<Label>,
    pub selected: String,
    /// Mean inner AUROC of each grid point (empty when the grid has one point).
    pub inner_auroc: Vec<Option<f64>>,
    pub metrics: MetricSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult {
    pub task: String,
    pub folds: Vec<OuterFold>,
}

impl CvResult {
    pub fn records(&self, strategy: &str, predictor: &str) -> Vec<FoldRecord> {
        self.folds
            .iter()
            .map(|f| FoldRecord {
                task: self.task.clone(),
                strategy: strategy.to_string(),
                predictor: predictor.to_string(),
                fold: f.fold,
                n_test: f.test_ids.len(),
                selected: f.selected.clone(),
                metrics: f.metrics,
            })
            .collect()
    }

    pub fn mean_auroc(&self) -> Option<f64> {
        let v: Vec<f64> = self.folds.iter().filter_map(|f| f.metrics.auroc).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Metrics over the rows with a binary label.
pub fn binary_metrics(scores: &[f64], labels: &[Label], tau: f64) -> Result<MetricSet> {
    let (s, y): (Vec<f64>, Vec<bool>) = scores
        .iter()
        .zip(labels)
        .filter(|(_, l)| !l.is_missing())
        .map(|(&s, l)| (s, l.is_positive()))
        .unzip();
    MetricSet::binary(&s, &y, tau)
}

/// The rows of `ds` sorted by note id, so a fit depends only on which notes
/// it sees and never on their position in the dataset.
fn canonical_subset(ds: &Dataset, rows: &[usize]) -> Dataset {
    let mut rows = rows.to_vec();
    rows.sort_by(|&a, &b| ds.notes[a].id.cmp(&ds.notes[b].id));
    ds.subset(&rows)
}

fn check_binary_task(ds: &Dataset, task: &str) -> Result<usize> {
    let t = ds.task_index(task)?;
    if ds.tasks[t].kind != TaskKind::BinaryClassification {
        return Err(Error::precondition(format!("cross-validation supports binary tasks; `{task}` is not")));
    }
    Ok(t)
}

/// Mean inner AUROC of every grid point on `train`.
fn inner_scores(
    train: &Dataset,
    task: &str,
    base: Option<&FineTunedModel>,
    cfg: &PipelineConfig,
    k_inner: usize,
    seed: u64,
) -> Result<Vec<Option<f64>>> {
    let t = train.task_index(task)?;
    let grid = cfg.grid();
    let split = stratified_split(train, k_inner, task, seed::derive(seed, "inner-split", &[]))?;
    let labels = train.labels(t);
    let mut sums = vec![(0.0, 0usize); grid.len()];
    // Predictor-only scope: one featurization of the whole outer-training set.
    let shared = match cfg.tune {
        TuneScope::PredictorOnly => {
            let f = fit_features(train, &cfg.features[0], base)?;
            Some(FeatureMatrix::from_rows(f.embed(train.texts())?)?)
        }
        TuneScope::FullPipeline => None,
    };
    for fold in 0..k_inner {
        let (tr, va) = (split.train_rows(fold), split.test_rows(fold));
        let va_labels: Vec<Label> = va.iter().map(|&i| labels[i]).collect();
        let tr_labels: Vec<Label> = tr.iter().map(|&i| labels[i]).collect();
        let mut fitted: Vec<Option<(Featurizer, FeatureMatrix, FeatureMatrix)>> = vec![None; cfg.features.len()];
        for (gi, &(f, p)) in grid.iter().enumerate() {
            let scores = match (&shared, p) {
                (Some(x), Some(p)) => {
                    let m = train_predictor(&cfg.predictors[p], &x.select(&tr), &tr_labels)?;
                    predict_proba(&m, &x.select(&va))?
                }
                (_, p) => {
                    if fitted[f].is_none() {
                        let sub = train.subset(&tr);
                        let feat = fit_features(&sub, &cfg.features[f], base)?;
                        let xtr = FeatureMatrix::from_rows(feat.embed(sub.texts())?)?;
                        let xva = FeatureMatrix::from_rows(feat.embed(va.iter().map(|&i| train.notes[i].text.as_str()))?)?;
                        fitted[f] = Some((feat, xtr, xva));
                    }
                    let (feat, xtr, xva) = fitted[f].as_ref().unwrap();
                    match p {
                        Some(p) => predict_proba(&train_predictor(&cfg.predictors[p], xtr, &tr_labels)?, xva)?,
                        None => {
                            let fp = FittedPipeline { task: task.to_string(), featurizer: feat.clone(), predictor: None };
                            fp.score(va.iter().map(|&i| train.notes[i].text.as_str()))?
                        }
                    }
                }
            };
            if let Some(a) = binary_metrics(&scores, &va_labels, cfg.threshold)?.auroc {
                sums[gi].0 += a;
                sums[gi].1 += 1;
            }
        }
    }
    Ok(sums.into_iter().map(|(s, n)| (n > 0).then(|| s / n as f64)).collect())
}

/// Select a grid point on `train` by inner cross-validation and refit it there.
pub fn select_and_fit(
    train: &Dataset,
    task: &str,
    base: Option<&FineTunedModel>,
    cfg: &PipelineConfig,
    k_inner: usize,
    seed: u64,
) -> Result<(FittedPipeline, String, Vec<Option<f64>>)> {
    cfg.validate()?;
    let grid = cfg.grid();
    let (best, inner) = if grid.len() == 1 {
        (0, Vec::new())
    } else {
        let inner = inner_scores(train, task, base, cfg, k_inner, seed)?;
        // Highest mean inner AUROC; ties and undefined scores keep grid order.
        let best = inner
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, v)| match v {
                Some(v) if *v > bv => (i, *v),
                _ => (bi, bv),
            })
            .0;
        (best, inner)
    };
    let (f, p) = grid[best];
    let fitted = fit_pipeline(train, task, base, &cfg.features[f], p.map(|p| &cfg.predictors[p]))?;
    Ok((fitted, cfg.describe(grid[best]), inner))
}

/// Nested cross-validation over a given outer fold assignment.
pub fn nested_cv_with_folds(
    ds: &Dataset,
    task: &str,
    base: Option<&FineTunedModel>,
    cfg: &PipelineConfig,
    outer: &FoldAssignment,
    k_inner: usize,
    seed: u64,
) -> Result<CvResult> {
    cfg.validate()?;
    let t = check_binary_task(ds, task)?;
    if outer.folds.len() != ds.len() {
        return Err(Error::Shape(format!("fold assignment covers {} rows of {}", outer.folds.len(), ds.len())));
    }
    let labels = ds.labels(t);
    let mut folds = Vec::with_capacity(outer.k);
    for fold in 0..outer.k {
        let train = canonical_subset(ds, &outer.train_rows(fold));
        let test = outer.test_rows(fold);
        let (fitted, selected, inner_auroc) = select_and_fit(&train, task, base, cfg, k_inner, seed)?;
        let scores = fitted.score(test.iter().map(|&i| ds.notes[i].text.as_str()))?;
        let test_labels: Vec<Label> = test.iter().map(|&i| labels[i]).collect();
        let metrics = binary_metrics(&scores, &test_labels, cfg.threshold)?;
        folds.push(OuterFold {
            fold,
            test_ids: test.iter().map(|&i| ds.notes[i].id.clone()).collect(),
            scores,
            labels: test_labels,
            selected,
            inner_auroc,
            metrics,
        });
    }
    Ok(CvResult { task: task.to_string(), folds })
}

/// Stratified nested cross-validation: outer folds for evaluation, inner
/// folds (on each outer-training portion) for grid selection by AUROC.
pub fn nested_cv(
    ds: &Dataset,
    task: &str,
    base: Option<&FineTunedModel>,
    cfg: &PipelineConfig,
    k_outer: usize,
    k_inner: usize,
    seed: u64,
) -> Result<CvResult> {
    check_binary_task(ds, task)?;
    let outer = stratified_split(ds, k_outer, task, seed::derive(seed, "outer-split", &[]))?;
    nested_cv_with_folds(ds, task, base, cfg, &outer, k_inner, seed)
}
