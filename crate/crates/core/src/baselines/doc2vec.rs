use rand::seq::SliceRandom;

use super::{context, decayed, prepare, sgns_step, token_counts, uniform_table, BaselineHyperparams, BaselineKind, EmbeddingMatrix, NegSampler};
use crate::corpus::Dataset;
use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::ops::axpy;
use crate::tensor::Tensor;
use crate::text::tokenize;

/// PV-DM step: the mean of the document vector and the context word vectors
/// predicts the centre token. Returns the loss; `neu1e` receives lr·d(h).
#[allow(clippy::too_many_arguments)]
fn pvdm_step(
    doc_vec: &[f64],
    words: &Tensor,
    ctx: &[u32],
    target: u32,
    out: &mut Tensor,
    sampler: &NegSampler,
    hp: &BaselineHyperparams,
    lr: f64,
    rng: &mut crate::seed::Rng,
    h: &mut [f64],
    neu1e: &mut [f64],
) -> f64 {
    let n = (ctx.len() + 1) as f64;
    h.copy_from_slice(doc_vec);
    for &w in ctx {
        axpy(1.0, words.row(w as usize), h);
    }
    h.iter_mut().for_each(|x| *x /= n);
    neu1e.fill(0.0);
    sgns_step(h, target, out, sampler, hp.negatives, lr, rng, neu1e)
}

pub fn train_doc2vec(ds: &Dataset, hp: &BaselineHyperparams) -> Result<EmbeddingMatrix> {
    let (vocab, docs) = prepare(ds, hp)?;
    let (v, d) = (vocab.len(), hp.dim);
    let mut rng = seed::rng(hp.seed, "doc2vec-init", &[]);
    let mut words = uniform_table(v, d, &mut rng);
    let mut doc_vecs = uniform_table(docs.len(), d, &mut rng);
    let mut out = Tensor::zeros(&[v, d]);
    let counts = token_counts(v, &docs);
    let sampler = NegSampler::new(&counts)?;
    let total: usize = docs.iter().map(Vec::len).sum::<usize>() * hp.epochs;
    let mut done = 0;
    let mut trace = Vec::with_capacity(hp.epochs);
    let (mut h, mut neu1e) = (vec![0.0; d], vec![0.0; d]);
    for epoch in 0..hp.epochs {
        let mut rng = seed::rng(hp.seed, "doc2vec-epoch", &[epoch as u64]);
        let mut order: Vec<usize> = (0..docs.len()).collect();
        order.shuffle(&mut rng);
        let (mut loss, mut n) = (0.0, 0usize);
        for &di in &order {
            let doc = &docs[di];
            for c in 0..doc.len() {
                done += 1;
                let ctx = context(doc, c, hp.window);
                let lr = decayed(hp.learning_rate, done, total);
                let dv = doc_vecs.row(di).to_vec();
                loss += pvdm_step(&dv, &words, &ctx, doc[c], &mut out, &sampler, hp, lr, &mut rng, &mut h, &mut neu1e);
                n += 1;
                let share = 1.0 / (ctx.len() + 1) as f64;
                axpy(share, &neu1e, doc_vecs.row_mut(di));
                for &w in &ctx {
                    axpy(share, &neu1e, words.row_mut(w as usize));
                }
            }
        }
        trace.push(loss / n.max(1) as f64);
    }
    Ok(EmbeddingMatrix {
        kind: BaselineKind::Doc2vec,
        vocab,
        hp: hp.clone(),
        words,
        aux: vec![("output".into(), out), ("docs".into(), doc_vecs), ("counts".into(), Tensor { shape: vec![v], data: counts })],
        trace,
    })
}

/// Embed an unseen document: a fresh vector, seeded by the text, is fitted by
/// SGD with the word and output tables frozen.
pub fn infer_doc2vec(m: &EmbeddingMatrix, text: &str) -> Result<Vec<f64>> {
    if m.kind != BaselineKind::Doc2vec {
        return Err(Error::Incompatible(format!("{} embedding cannot infer document vectors", m.kind.name())));
    }
    let doc: Vec<u32> = tokenize(text).iter().map(|w| m.vocab.id(w)).collect();
    if doc.is_empty() {
        return Err(Error::precondition("cannot infer a doc2vec vector for an empty document"));
    }
    let hp = &m.hp;
    let d = hp.dim;
    let mut rng = seed::rng(hp.seed, "doc2vec-infer", &[seed::hash_str(text)]);
    let mut vec = uniform_table(1, d, &mut rng).data;
    // Output vectors stay frozen: updates go to a scratch copy that is discarded.
    let mut out = m.aux("output")?.clone();
    let frozen = out.clone();
    let sampler = NegSampler::new(&m.aux("counts")?.data)?;
    let total = doc.len() * hp.infer_epochs;
    let (mut h, mut neu1e) = (vec![0.0; d], vec![0.0; d]);
    let mut done = 0;
    for _ in 0..hp.infer_epochs {
        for c in 0..doc.len() {
            done += 1;
            let ctx = context(&doc, c, hp.window);
            let lr = decayed(hp.learning_rate, done, total);
            pvdm_step(&vec, &m.words, &ctx, doc[c], &mut out, &sampler, hp, lr, &mut rng, &mut h, &mut neu1e);
            out.data.copy_from_slice(&frozen.data);
            axpy(1.0 / (ctx.len() + 1) as f64, &neu1e, &mut vec);
        }
    }
    Ok(vec)
}
