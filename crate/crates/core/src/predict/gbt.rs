use serde::{Deserialize, Serialize};

use super::tree::{grow, midpoint, Columns, Presorted, Split, Tree};
use super::FeatureMatrix;
use crate::error::{Error, Result};
use crate::tensor::ops::sigmoid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbtParams {
    pub rounds: usize,
    pub max_depth: usize,
    pub eta: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub min_child_weight: f64,
}

impl Default for GbtParams {
    fn default() -> Self {
        GbtParams { rounds: 100, max_depth: 3, eta: 0.1, lambda: 1.0, gamma: 0.0, min_child_weight: 0.0 }
    }
}

impl GbtParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return Err(Error::field("eta", "must be positive"));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::field("lambda", "must be finite and non-negative"));
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(Error::field("gamma", "must be finite and non-negative"));
        }
        if !(self.min_child_weight.is_finite() && self.min_child_weight >= 0.0) {
            return Err(Error::field("min_child_weight", "must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Boosted trees for the logistic objective. Leaves store the raw Newton
/// weight `−G/(H+λ)`; predictions add `eta ·` leaf to the base margin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    pub params: GbtParams,
    pub base_score: f64,
    pub trees: Vec<Tree>,
    pub dim: usize,
}

/// `½[G_L²/(H_L+λ) + G_R²/(H_R+λ) − G²/(H+λ)] − γ`
pub fn split_gain(gl: f64, hl: f64, gr: f64, hr: f64, lambda: f64, gamma: f64) -> f64 {
    let score = |g: f64, h: f64| g * g / (h + lambda);
    0.5 * (score(gl, hl) + score(gr, hr) - score(gl + gr, hl + hr)) - gamma
}

pub fn leaf_weight(g: f64, h: f64, lambda: f64) -> f64 {
    -g / (h + lambda)
}

/// Mean logistic loss of margins against 0/1 targets.
pub fn logistic_loss(margins: &[f64], y: &[f64]) -> f64 {
    margins
        .iter()
        .zip(y)
        .map(|(&f, &t)| f.max(0.0) + (-f.abs()).exp().ln_1p() - t * f)
        .sum::<f64>()
        / y.len() as f64
}

fn fit_tree(x: &Columns, pre: &mut Presorted, g: &[f64], h: &[f64], p: &GbtParams) -> Tree {
    let rows: Vec<usize> = (0..g.len()).collect();
    let leaf = |rows: &[usize]| {
        let (gs, hs) = rows.iter().fold((0.0, 0.0), |(a, b), &i| (a + g[i], b + h[i]));
        leaf_weight(gs, hs, p.lambda)
    };
    let mut best = |rows: &[usize]| -> Option<Split> {
        let (gt, ht) = rows.iter().fold((0.0, 0.0), |(a, b), &i| (a + g[i], b + h[i]));
        let mut best: Option<Split> = None;
        let mut sorted = Vec::with_capacity(rows.len());
        pre.load(rows);
        for f in 0..x.cols {
            pre.sorted_into(f, &mut sorted);
            let (mut gl, mut hl) = (0.0, 0.0);
            for k in 0..sorted.len() - 1 {
                let i = sorted[k];
                gl += g[i];
                hl += h[i];
                let (lo, hi) = (x.get(i, f), x.get(sorted[k + 1], f));
                if lo == hi {
                    continue;
                }
                let (gr, hr) = (gt - gl, ht - hl);
                if hl < p.min_child_weight || hr < p.min_child_weight {
                    continue;
                }
                let gain = split_gain(gl, hl, gr, hr, p.lambda, p.gamma);
                let cand = Split { feature: f, threshold: midpoint(lo, hi), gain };
                if gain > 0.0 && cand.beats(best.as_ref(), x, rows) {
                    best = Some(cand);
                }
            }
        }
        best
    };
    let mut tree = Tree { nodes: Vec::new() };
    grow(rows, 0, Some(p.max_depth), &mut tree, &leaf, &mut best, x);
    tree
}

/// Fit on 0/1 targets. Also returns the training loss after each round
/// (`trace[0]` is the loss of the base score alone).
pub fn train_gbt_traced(x: &FeatureMatrix, y: &[f64], p: &GbtParams) -> Result<(GbtModel, Vec<f64>)> {
    p.validate()?;
    super::check_binary(x, y)?;
    let n = y.len();
    let prior = y.iter().sum::<f64>() / n as f64;
    let base_score = (prior / (1.0 - prior)).ln();
    let cols = Columns { data: &x.data, cols: x.cols };
    let mut pre = Presorted::new(&cols, n);
    let mut margins = vec![base_score; n];
    let mut trace = vec![logistic_loss(&margins, y)];
    let mut trees = Vec::with_capacity(p.rounds);
    let (mut g, mut h) = (vec![0.0; n], vec![0.0; n]);
    for _ in 0..p.rounds {
        for i in 0..n {
            let pr = sigmoid(margins[i]);
            g[i] = pr - y[i];
            h[i] = pr * (1.0 - pr);
        }
        let tree = fit_tree(&cols, &mut pre, &g, &h, p);
        for (i, m) in margins.iter_mut().enumerate() {
            *m += p.eta * tree.predict(x.row(i));
        }
        trace.push(logistic_loss(&margins, y));
        trees.push(tree);
    }
    Ok((GbtModel { params: p.clone(), base_score, trees, dim: x.cols }, trace))
}

pub fn train_gbt(x: &FeatureMatrix, y: &[f64], p: &GbtParams) -> Result<GbtModel> {
    Ok(train_gbt_traced(x, y, p)?.0)
}

impl GbtModel {
    pub fn margin(&self, x: &[f64]) -> f64 {
        self.base_score + self.trees.iter().map(|t| self.params.eta * t.predict(x)).sum::<f64>()
    }

    pub fn predict_row(&self, x: &[f64]) -> f64 {
        sigmoid(self.margin(x))
    }
}
