use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::metrics::MetricSet;
use crate::error::{Error, Result};

/// Fold aggregate: mean, standard error and the normal 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    /// Folds with a defined value.
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation over √n; 0 for a single fold.
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl Summary {
    /// `None` when no value is defined.
    pub fn of(values: &[f64]) -> Option<Summary> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let se = if n > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Some(Summary { n, mean, se, ci_low: mean - 1.96 * se, ci_high: mean + 1.96 * se })
    }
}

/// One outer fold of one (task, strategy, predictor) combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldRecord {
    pub task: String,
    pub strategy: String,
    pub predictor: String,
    pub fold: usize,
    pub n_test: usize,
    /// The grid point chosen by the inner loop.
    pub selected: String,
    pub metrics: MetricSet,
}

/// Provenance for a report.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunMeta {
    pub seed: u64,
    pub k_outer: usize,
    pub k_inner: usize,
    pub config_hash: String,
    pub tool: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub meta: RunMeta,
    pub records: Vec<FoldRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub task: String,
    pub strategy: String,
    pub predictor: String,
    pub folds: usize,
    pub metrics: BTreeMap<String, Summary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub meta: RunMeta,
    pub groups: Vec<GroupSummary>,
}

#[derive(Serialize, Deserialize)]
struct CsvRow {
    task: String,
    strategy: String,
    predictor: String,
    fold: usize,
    n_test: usize,
    threshold: f64,
    auroc: Option<f64>,
    auprc: Option<f64>,
    accuracy: Option<f64>,
    sensitivity: Option<f64>,
    specificity: Option<f64>,
    precision: Option<f64>,
    f1: Option<f64>,
    mse: Option<f64>,
    selected: String,
}

const META_PREFIX: &str = "# meta: ";

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::Parse { line, reason: e.to_string() }
}

/// (task, strategy, predictor).
pub type GroupKey = (String, String, String);

impl EvalReport {
    /// Records grouped by (task, strategy, predictor) in first-seen order.
    pub fn groups(&self) -> Vec<(GroupKey, Vec<&FoldRecord>)> {
        let mut out: Vec<(GroupKey, Vec<&FoldRecord>)> = Vec::new();
        for r in &self.records {
            let key = (r.task.clone(), r.strategy.clone(), r.predictor.clone());
            match out.iter_mut().find(|(k, _)| *k == key) {
                Some((_, v)) => v.push(r),
                None => out.push((key, vec![r])),
            }
        }
        out
    }

    pub fn summary(&self) -> ReportSummary {
        let groups = self
            .groups()
            .into_iter()
            .map(|((task, strategy, predictor), recs)| {
                let metrics = MetricSet::NAMES
                    .iter()
                    .filter_map(|&name| {
                        let vals: Vec<f64> = recs.iter().filter_map(|r| r.metrics.get(name)).collect();
                        Summary::of(&vals).map(|s| (name.to_string(), s))
                    })
                    .collect();
                GroupSummary { task, strategy, predictor, folds: recs.len(), metrics }
            })
            .collect();
        ReportSummary { meta: self.meta.clone(), groups }
    }

    /// A `# ` line carrying the run metadata as JSON, then one row per
    /// task × strategy × predictor × fold; undefined metrics are empty cells.
    pub fn to_csv(&self) -> Result<String> {
        let mut out = format!("{META_PREFIX}{}\n", serde_json::to_string(&self.meta)?).into_bytes();
        let mut w = csv::Writer::from_writer(&mut out);
        for r in &self.records {
            let m = &r.metrics;
            w.serialize(CsvRow {
                task: r.task.clone(),
                strategy: r.strategy.clone(),
                predictor: r.predictor.clone(),
                fold: r.fold,
                n_test: r.n_test,
                threshold: m.threshold,
                auroc: m.auroc,
                auprc: m.auprc,
                accuracy: m.accuracy,
                sensitivity: m.sensitivity,
                specificity: m.specificity,
                precision: m.precision,
                f1: m.f1,
                mse: m.mse,
                selected: r.selected.clone(),
            })
            .map_err(csv_err)?;
        }
        w.flush()?;
        drop(w);
        Ok(String::from_utf8(out).expect("csv output is UTF-8"))
    }

    /// Parse output of [`EvalReport::to_csv`]; without a metadata line the
    /// metadata is left default.
    pub fn from_csv(text: &str) -> Result<EvalReport> {
        let (meta, body) = match text.strip_prefix(META_PREFIX) {
            Some(rest) => {
                let (line, body) = rest.split_once('\n').unwrap_or((rest, ""));
                let meta = serde_json::from_str(line).map_err(|e| Error::Parse { line: 1, reason: format!("metadata: {e}") })?;
                (meta, body)
            }
            None => (RunMeta::default(), text),
        };
        let offset = text.len() - body.len();
        let header_lines = text[..offset].lines().count();
        let mut rd = csv::Reader::from_reader(body.as_bytes());
        let mut records = Vec::new();
        for row in rd.deserialize::<CsvRow>() {
            let r = row.map_err(|e| match csv_err(e) {
                Error::Parse { line, reason } => Error::Parse { line: line + header_lines, reason },
                other => other,
            })?;
            records.push(FoldRecord {
                task: r.task,
                strategy: r.strategy,
                predictor: r.predictor,
                fold: r.fold,
                n_test: r.n_test,
                selected: r.selected,
                metrics: MetricSet {
                    auroc: r.auroc,
                    auprc: r.auprc,
                    accuracy: r.accuracy,
                    sensitivity: r.sensitivity,
                    specificity: r.specificity,
                    precision: r.precision,
                    f1: r.f1,
                    mse: r.mse,
                    threshold: r.threshold,
                },
            });
        }
        Ok(EvalReport { meta, records })
    }
}
