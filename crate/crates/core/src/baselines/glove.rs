use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use super::{prepare, uniform_table, BaselineHyperparams, BaselineKind, EmbeddingMatrix};
use crate::corpus::Dataset;
use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::ops::dot;
use crate::tensor::Tensor;

/// GloVe weighting `f(x) = (x / x_max)^α` below `x_max`, 1 above.
pub fn glove_weight(x: f64, x_max: f64, alpha: f64) -> f64 {
    if x < x_max {
        (x / x_max).powf(alpha)
    } else {
        1.0
    }
}

struct Tables {
    w: Tensor,
    c: Tensor,
    bw: Vec<f64>,
    bc: Vec<f64>,
}

fn objective(t: &Tables, entries: &[(u32, u32, f64)], hp: &BaselineHyperparams) -> f64 {
    entries
        .iter()
        .map(|&(i, j, x)| {
            let diff = dot(t.w.row(i as usize), t.c.row(j as usize)) + t.bw[i as usize] + t.bc[j as usize] - x.ln();
            glove_weight(x, hp.x_max, hp.alpha) * diff * diff
        })
        .sum()
}

/// Symmetric co-occurrence counts weighted by 1/distance, in id order.
fn cooccurrences(docs: &[Vec<u32>], window: usize) -> Vec<(u32, u32, f64)> {
    let mut x: BTreeMap<(u32, u32), f64> = BTreeMap::new();
    for doc in docs {
        for (i, &a) in doc.iter().enumerate() {
            for dist in 1..=window {
                let Some(&b) = doc.get(i + dist) else { break };
                let inc = 1.0 / dist as f64;
                *x.entry((a, b)).or_default() += inc;
                *x.entry((b, a)).or_default() += inc;
            }
        }
    }
    x.into_iter().map(|((i, j), v)| (i, j, v)).collect()
}

/// Weighted least squares on log co-occurrences with plain SGD. The learning
/// rate decays as `lr / √(1 + epoch)`; `trace[0]` is the objective at init and
/// `trace[e]` after epoch `e`. Word vectors are `w + w̃`.
pub fn train_glove(ds: &Dataset, hp: &BaselineHyperparams) -> Result<EmbeddingMatrix> {
    let (vocab, docs) = prepare(ds, hp)?;
    let entries = cooccurrences(&docs, hp.window);
    if entries.is_empty() {
        return Err(Error::precondition("co-occurrence matrix is empty (every document has fewer than two tokens)"));
    }
    let (v, d) = (vocab.len(), hp.dim);
    let mut rng = seed::rng(hp.seed, "glove-init", &[]);
    let mut t = Tables { w: uniform_table(v, d, &mut rng), c: uniform_table(v, d, &mut rng), bw: vec![0.0; v], bc: vec![0.0; v] };
    let mut trace = vec![objective(&t, &entries, hp)];
    let mut order: Vec<usize> = (0..entries.len()).collect();
    for epoch in 0..hp.epochs {
        let lr = hp.learning_rate / (1.0 + epoch as f64).sqrt();
        order.shuffle(&mut seed::rng(hp.seed, "glove-epoch", &[epoch as u64]));
        for &e in &order {
            let (i, j, x) = entries[e];
            let (i, j) = (i as usize, j as usize);
            let diff = dot(t.w.row(i), t.c.row(j)) + t.bw[i] + t.bc[j] - x.ln();
            let g = 2.0 * glove_weight(x, hp.x_max, hp.alpha) * diff * lr;
            for k in 0..d {
                let wi = t.w.data[i * d + k];
                let cj = t.c.data[j * d + k];
                t.w.data[i * d + k] -= g * cj;
                t.c.data[j * d + k] -= g * wi;
            }
            t.bw[i] -= g;
            t.bc[j] -= g;
        }
        trace.push(objective(&t, &entries, hp));
    }
    let mut words = t.w.clone();
    words.data.iter_mut().zip(&t.c.data).for_each(|(a, b)| *a += b);
    let aux = vec![
        ("input".to_string(), t.w),
        ("context".to_string(), t.c),
        ("bias".to_string(), Tensor { shape: vec![v], data: t.bw }),
        ("context_bias".to_string(), Tensor { shape: vec![v], data: t.bc }),
    ];
    Ok(EmbeddingMatrix { kind: BaselineKind::Glove, vocab, hp: hp.clone(), words, aux, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ClinicalNote, Dataset, TaskId};

    fn docs(texts: &[&str], copies: usize) -> Dataset {
        let mut ds = Dataset::new(vec![TaskId::binary("dvt")]);
        for c in 0..copies {
            for (i, t) in texts.iter().enumerate() {
                ds.notes.push(ClinicalNote { id: format!("{c}-{i}"), text: t.to_string(), labels: vec![crate::corpus::Label::Missing] });
            }
        }
        ds
    }

    #[test]
    fn weight_endpoints() {
        assert_eq!(glove_weight(100.0, 100.0, 0.75), 1.0);
        assert_eq!(glove_weight(500.0, 100.0, 0.75), 1.0);
        assert!(glove_weight(1e-12, 100.0, 0.75) < 1e-9);
    }

    #[test]
    fn always_paired_tokens_fit_their_log_count() {
        let ds = docs(&["femur tibia"], 40);
        let hp = BaselineHyperparams { dim: 8, epochs: 200, learning_rate: 0.1, ..Default::default() };
        let m = train_glove(&ds, &hp).unwrap();
        let (w, c) = (m.aux("input").unwrap(), m.aux("context").unwrap());
        let (bw, bc) = (m.aux("bias").unwrap(), m.aux("context_bias").unwrap());
        let (i, j) = (m.vocab.id("femur") as usize, m.vocab.id("tibia") as usize);
        let residual = dot(w.row(i), c.row(j)) + bw.data[i] + bc.data[j] - 40f64.ln();
        assert!(residual.abs() < 0.1, "residual {residual}");
    }

    #[test]
    fn objective_never_increases() {
        let ds = docs(&["left knee arthroscopy with debridement", "right hip replacement", "knee replacement under spinal"], 10);
        let hp = BaselineHyperparams { dim: 8, epochs: 15, ..Default::default() };
        let m = train_glove(&ds, &hp).unwrap();
        assert!(m.trace.windows(2).all(|w| w[1] <= w[0]), "{:?}", m.trace);
        assert!(m.trace.last() < m.trace.first());
    }

    #[test]
    fn single_token_corpus_is_rejected() {
        assert!(train_glove(&docs(&["knee"], 3), &BaselineHyperparams::default()).is_err());
    }
}
