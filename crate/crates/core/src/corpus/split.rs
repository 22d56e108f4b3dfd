use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Dataset, Label, TaskKind};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub task: String,
    /// Fold index of each dataset row.
    pub folds: Vec<usize>,
    pub ids: Vec<String>,
}

impl FoldAssignment {
    pub fn test_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.folds.len()).filter(|&i| self.folds[i] == fold).collect()
    }

    pub fn train_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.folds.len()).filter(|&i| self.folds[i] != fold).collect()
    }

    pub fn fold_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id).map(|i| self.folds[i])
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        self.folds.iter().for_each(|&f| sizes[f] += 1);
        sizes
    }
}

/// Stratification stratum of a label. Regression labels share one stratum.
fn stratum(label: &Label) -> (u8, u32) {
    match label {
        Label::Negative => (0, 0),
        Label::Positive => (1, 0),
        Label::Class(c) => (2, *c),
        Label::Value(_) => (3, 0),
        Label::Missing => (4, 0),
    }
}

/// Stratified k-fold assignment on one task.
///
/// Each stratum (negatives, positives, each class, Missing) is shuffled with
/// the seed and dealt round-robin, continuing the deal position from the
/// previous stratum, so every stratum's per-fold count is within one of its
/// proportional share and fold sizes differ by at most one.
pub fn stratified_split(ds: &Dataset, k: usize, task: &str, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::field("k", "fold count must be at least 2"));
    }
    if k > ds.len() {
        return Err(Error::Stratify(format!("{k} folds requested for {} documents", ds.len())));
    }
    let t = ds.task_index(task)?;
    let mut strata: BTreeMap<(u8, u32), Vec<usize>> = BTreeMap::new();
    for (i, note) in ds.notes.iter().enumerate() {
        strata.entry(stratum(&note.labels[t])).or_default().push(i);
    }
    if ds.tasks[t].kind == TaskKind::BinaryClassification {
        for (key, class) in [((1u8, 0u32), "positive"), ((0, 0), "negative")] {
            if !strata.contains_key(&key) {
                return Err(Error::Stratify(format!("task `{task}` has no {class} examples")));
            }
        }
    }
    let mut rng = seed::rng(seed, "stratified-split", &[k as u64]);
    let mut folds = vec![0; ds.len()];
    let mut next = 0usize;
    // Positives first so the rarest class starts at fold 0.
    let order: Vec<(u8, u32)> = {
        let mut keys: Vec<_> = strata.keys().copied().collect();
        keys.sort_by_key(|&(kind, c)| (kind != 1, kind, c));
        keys
    };
    for key in order {
        let rows = strata.get_mut(&key).unwrap();
        rows.shuffle(&mut rng);
        for &r in rows.iter() {
            folds[r] = next % k;
            next += 1;
        }
    }
    Ok(FoldAssignment { k, task: task.to_string(), folds, ids: ds.notes.iter().map(|n| n.id.clone()).collect() })
}

/// Binary task with the fewest positives that still has both classes.
pub fn rarest_task(ds: &Dataset) -> Result<String> {
    ds.tasks
        .iter()
        .enumerate()
        .filter(|(_, task)| task.kind == TaskKind::BinaryClassification)
        .map(|(t, task)| {
            let pos = ds.notes.iter().filter(|n| n.labels[t] == Label::Positive).count();
            let neg = ds.notes.iter().filter(|n| n.labels[t] == Label::Negative).count();
            (task, pos, neg)
        })
        .filter(|&(_, pos, neg)| pos > 0 && neg > 0)
        .min_by_key(|&(_, pos, _)| pos)
        .map(|(task, _, _)| task.name.clone())
        .ok_or_else(|| Error::Stratify("no binary task has both classes present".into()))
}
