use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_lengths(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::precondition(format!("score {i} is NaN")));
    }
    Ok(())
}

/// Area under the ROC curve as the Mann–Whitney statistic
/// `P(s⁺ > s⁻) + ½·P(s⁺ = s⁻)`, from mid-ranks in O(n log n).
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Undefined(format!("AUROC needs both classes ({pos} positives, {neg} negatives)")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the rank sum of positives keeps mid-ranks integral.
    let mut rank_sum2: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1..=j+1 share the mid-rank (i+j+2)/2.
        let mid2 = (i + j + 2) as u64;
        let p = order[i..=j].iter().filter(|&&k| labels[k]).count() as u64;
        rank_sum2 += p * mid2;
        i = j + 1;
    }
    let (pos, neg) = (pos as u64, neg as u64);
    let u2 = rank_sum2 - pos * (pos + 1);
    Ok(u2 as f64 / (2 * pos * neg) as f64)
}

/// Average precision: `Σ (Rᵢ − Rᵢ₋₁)·Pᵢ` over descending distinct score
/// thresholds, with tied scores entering as a single point.
pub fn auprc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let total_pos = labels.iter().filter(|&&l| l).count();
    if total_pos == 0 {
        return Err(Error::Undefined("AUPRC needs at least one positive".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_tp = 0usize;
    let mut ap = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        if tp > prev_tp {
            ap += (tp - prev_tp) as f64 / total_pos as f64 * (tp as f64 / (tp + fp) as f64);
            prev_tp = tp;
        }
    }
    Ok(ap)
}

/// Confusion-matrix metrics at a threshold; ratios with a zero denominator
/// are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdMetrics {
    pub threshold: f64,
    pub accuracy: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub precision: Option<f64>,
    pub f1: Option<f64>,
}

fn ratio(a: usize, b: usize) -> Option<f64> {
    (b > 0).then(|| a as f64 / b as f64)
}

/// A score is called positive iff `score ≥ τ`.
pub fn threshold_metrics(scores: &[f64], labels: &[bool], tau: f64) -> Result<ThresholdMetrics> {
    check_lengths(scores, labels)?;
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::field("threshold", "must lie in [0, 1]"));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= tau, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let sensitivity = ratio(tp, tp + fn_);
    let precision = ratio(tp, tp + fp);
    let f1 = match (precision, sensitivity) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        (Some(_), Some(_)) => Some(0.0),
        _ => None,
    };
    Ok(ThresholdMetrics {
        threshold: tau,
        accuracy: ratio(tp + tn, scores.len()),
        sensitivity,
        specificity: ratio(tn, tn + fp),
        precision,
        f1,
    })
}

pub fn mse(preds: &[f64], targets: &[f64]) -> Result<f64> {
    if preds.len() != targets.len() {
        return Err(Error::Shape(format!("{} predictions for {} targets", preds.len(), targets.len())));
    }
    if preds.is_empty() {
        return Err(Error::Undefined("MSE of zero predictions".into()));
    }
    Ok(preds.iter().zip(targets).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / preds.len() as f64)
}

/// Every metric for one evaluation; `None` marks an undefined value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub auroc: Option<f64>,
    pub auprc: Option<f64>,
    pub accuracy: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub precision: Option<f64>,
    pub f1: Option<f64>,
    pub mse: Option<f64>,
    pub threshold: f64,
}

impl MetricSet {
    pub const NAMES: [&'static str; 8] = ["auroc", "auprc", "accuracy", "sensitivity", "specificity", "precision", "f1", "mse"];

    /// Binary-task metrics; AUROC/AUPRC are `None` when undefined for these labels.
    pub fn binary(scores: &[f64], labels: &[bool], tau: f64) -> Result<Self> {
        let t = threshold_metrics(scores, labels, tau)?;
        let defined = |r: Result<f64>| match r {
            Ok(v) => Ok(Some(v)),
            Err(Error::Undefined(_)) => Ok(None),
            Err(e) => Err(e),
        };
        Ok(MetricSet {
            auroc: defined(auroc(scores, labels))?,
            auprc: defined(auprc(scores, labels))?,
            accuracy: t.accuracy,
            sensitivity: t.sensitivity,
            specificity: t.specificity,
            precision: t.precision,
            f1: t.f1,
            mse: None,
            threshold: tau,
        })
    }

    pub fn regression(preds: &[f64], targets: &[f64]) -> Result<Self> {
        Ok(MetricSet {
            auroc: None,
            auprc: None,
            accuracy: None,
            sensitivity: None,
            specificity: None,
            precision: None,
            f1: None,
            mse: Some(mse(preds, targets)?),
            threshold: 0.5,
        })
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        match name {
            "auroc" => self.auroc,
            "auprc" => self.auprc,
            "accuracy" => self.accuracy,
            "sensitivity" => self.sensitivity,
            "specificity" => self.specificity,
            "precision" => self.precision,
            "f1" => self.f1,
            "mse" => self.mse,
            _ => None,
        }
    }

    pub fn values(&self) -> [Option<f64>; 8] {
        Self::NAMES.map(|n| self.get(n))
    }
}
