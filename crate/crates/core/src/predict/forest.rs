use rand::seq::index::sample;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::tree::{grow, midpoint, Columns, Presorted, Split, Tree};
use super::FeatureMatrix;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RfParams {
    pub trees: usize,
    /// Features tried per node; `None` means ⌊√d⌋ (at least 1).
    pub max_features: Option<usize>,
    pub max_depth: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for RfParams {
    fn default() -> Self {
        RfParams { trees: 100, max_features: None, max_depth: None, bootstrap: true, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub params: RfParams,
    pub trees: Vec<Tree>,
    pub dim: usize,
}

fn gini(pos: f64, n: f64) -> f64 {
    let p = pos / n;
    2.0 * p * (1.0 - p)
}

/// Bagged CART with Gini splits; leaves hold the positive fraction.
pub fn train_rf(x: &FeatureMatrix, y: &[f64], p: &RfParams) -> Result<ForestModel> {
    if p.trees == 0 {
        return Err(Error::field("trees", "must be at least 1"));
    }
    super::check_binary(x, y)?;
    let d = x.cols;
    let m = p.max_features.unwrap_or(((d as f64).sqrt() as usize).max(1));
    if m == 0 || m > d {
        return Err(Error::field("max_features", format!("must lie in 1..={d}")));
    }
    let cols = Columns { data: &x.data, cols: d };
    let n = y.len();
    let mut pre = Presorted::new(&cols, n);
    let mut trees = Vec::with_capacity(p.trees);
    for t in 0..p.trees {
        let mut rng = seed::rng(p.seed, "rf-tree", &[t as u64]);
        let rows: Vec<usize> = if p.bootstrap { (0..n).map(|_| rng.random_range(0..n)).collect() } else { (0..n).collect() };
        let leaf = |rows: &[usize]| rows.iter().map(|&i| y[i]).sum::<f64>() / rows.len() as f64;
        let mut best = |rows: &[usize]| -> Option<Split> {
            let total = rows.len() as f64;
            let pos_total: f64 = rows.iter().map(|&i| y[i]).sum();
            if pos_total == 0.0 || pos_total == total {
                return None;
            }
            let parent = gini(pos_total, total);
            let mut features: Vec<usize> = if m == d { (0..d).collect() } else { sample(&mut rng, d, m).into_vec() };
            features.sort_unstable();
            let mut best: Option<Split> = None;
            let mut sorted = Vec::with_capacity(rows.len());
            pre.load(rows);
            for f in features {
                pre.sorted_into(f, &mut sorted);
                let mut pos_l = 0.0;
                for k in 0..sorted.len() - 1 {
                    pos_l += y[sorted[k]];
                    let (lo, hi) = (cols.get(sorted[k], f), cols.get(sorted[k + 1], f));
                    if lo == hi {
                        continue;
                    }
                    let nl = (k + 1) as f64;
                    let nr = total - nl;
                    let child = (nl * gini(pos_l, nl) + nr * gini(pos_total - pos_l, nr)) / total;
                    let gain = parent - child;
                    let cand = Split { feature: f, threshold: midpoint(lo, hi), gain };
                    if gain > 1e-12 && cand.beats(best.as_ref(), &cols, rows) {
                        best = Some(cand);
                    }
                }
            }
            best
        };
        let mut tree = Tree { nodes: Vec::new() };
        grow(rows, 0, p.max_depth, &mut tree, &leaf, &mut best, &cols);
        trees.push(tree);
    }
    Ok(ForestModel { params: p.clone(), trees, dim: d })
}

impl ForestModel {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64
    }
}
