use rand::seq::SliceRandom;

use super::{context, decayed, prepare, sgns_step, token_counts, uniform_table, BaselineHyperparams, BaselineKind, EmbeddingMatrix, NegSampler};
use crate::corpus::Dataset;
use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::ops::axpy;
use crate::tensor::Tensor;

/// word2vec CBOW with negative sampling: the mean of the context vectors
/// predicts the centre token.
pub fn train_cbow(ds: &Dataset, hp: &BaselineHyperparams) -> Result<EmbeddingMatrix> {
    let (vocab, docs) = prepare(ds, hp)?;
    let longest = docs.iter().map(Vec::len).max().unwrap_or(0);
    if hp.window >= longest {
        return Err(Error::field("window", format!("{} leaves no document with a token outside the window (longest has {longest})", hp.window)));
    }
    let (v, d) = (vocab.len(), hp.dim);
    let mut rng = seed::rng(hp.seed, "cbow-init", &[]);
    let mut words = uniform_table(v, d, &mut rng);
    let mut out = Tensor::zeros(&[v, d]);
    let counts = token_counts(v, &docs);
    let sampler = NegSampler::new(&counts)?;
    let total: usize = docs.iter().map(Vec::len).sum::<usize>() * hp.epochs;
    let mut done = 0;
    let mut trace = Vec::with_capacity(hp.epochs);
    let mut h = vec![0.0; d];
    let mut neu1e = vec![0.0; d];
    for epoch in 0..hp.epochs {
        let mut rng = seed::rng(hp.seed, "cbow-epoch", &[epoch as u64]);
        let mut order: Vec<usize> = (0..docs.len()).collect();
        order.shuffle(&mut rng);
        let (mut loss, mut n) = (0.0, 0usize);
        for &di in &order {
            let doc = &docs[di];
            for c in 0..doc.len() {
                done += 1;
                let ctx = context(doc, c, hp.window);
                if ctx.is_empty() {
                    continue;
                }
                h.fill(0.0);
                for &w in &ctx {
                    axpy(1.0, words.row(w as usize), &mut h);
                }
                h.iter_mut().for_each(|x| *x /= ctx.len() as f64);
                neu1e.fill(0.0);
                let lr = decayed(hp.learning_rate, done, total);
                loss += sgns_step(&h, doc[c], &mut out, &sampler, hp.negatives, lr, &mut rng, &mut neu1e);
                n += 1;
                for &w in &ctx {
                    axpy(1.0, &neu1e, words.row_mut(w as usize));
                }
            }
        }
        trace.push(loss / n.max(1) as f64);
    }
    Ok(EmbeddingMatrix {
        kind: BaselineKind::Cbow,
        vocab,
        hp: hp.clone(),
        words,
        aux: vec![("output".into(), out)],
        trace,
    })
}
