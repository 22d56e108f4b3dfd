use rand::seq::SliceRandom;

use super::{context, decayed, prepare, sgns_step, token_counts, uniform_table, BaselineHyperparams, BaselineKind, EmbeddingMatrix, NegSampler};
use crate::corpus::Dataset;
use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::ops::axpy;
use crate::tensor::Tensor;
use crate::text::{is_special, UNK};

/// Character n-grams of `<word>` for n in `min_n..=max_n`. Words shorter than
/// `min_n` characters have none (they are represented by their word vector).
pub fn char_ngrams(word: &str, min_n: usize, max_n: usize) -> Vec<String> {
    if word.chars().count() < min_n {
        return Vec::new();
    }
    let marked: Vec<char> = format!("<{word}>").chars().collect();
    let mut out = Vec::new();
    for n in min_n..=max_n {
        for start in 0..marked.len().saturating_sub(n - 1) {
            out.push(marked[start..start + n].iter().collect());
        }
    }
    out
}

fn bucket(ngram: &str, buckets: usize) -> usize {
    (seed::hash_str(ngram) % buckets as u64) as usize
}

/// Rows of a token's representation: `(is_ngram, row)`.
fn components(m_vocab_id: Option<u32>, token: &str, hp: &BaselineHyperparams) -> Vec<(bool, usize)> {
    let mut out: Vec<(bool, usize)> = Vec::new();
    if let Some(id) = m_vocab_id {
        out.push((false, id as usize));
    }
    out.extend(char_ngrams(token, hp.min_n, hp.max_n).iter().map(|g| (true, bucket(g, hp.buckets))));
    if out.is_empty() {
        out.push((false, UNK as usize));
    }
    out
}

fn compose(words: &Tensor, ngrams: &Tensor, comps: &[(bool, usize)], out: &mut [f64]) {
    out.fill(0.0);
    for &(is_ngram, row) in comps {
        axpy(1.0, if is_ngram { ngrams.row(row) } else { words.row(row) }, out);
    }
    out.iter_mut().for_each(|v| *v /= comps.len() as f64);
}

/// Mean of the word vector (when in vocabulary) and the n-gram bucket vectors.
pub(crate) fn token_vector(m: &EmbeddingMatrix, token: &str) -> Result<Vec<f64>> {
    let ngrams = m.aux("ngrams")?;
    let id = m.vocab.contains(token).then(|| m.vocab.id(token));
    let mut out = vec![0.0; m.dim()];
    compose(&m.words, ngrams, &components(id, token, &m.hp), &mut out);
    Ok(out)
}

fn check(hp: &BaselineHyperparams) -> Result<()> {
    if hp.buckets == 0 {
        return Err(Error::field("buckets", "must be at least 1"));
    }
    if hp.min_n == 0 || hp.min_n > hp.max_n {
        return Err(Error::field("min_n", format!("n-gram range {}..={} is empty or starts at 0", hp.min_n, hp.max_n)));
    }
    Ok(())
}

/// CBOW with negative sampling over subword-composed input vectors.
pub fn train_fasttext(ds: &Dataset, hp: &BaselineHyperparams) -> Result<EmbeddingMatrix> {
    check(hp)?;
    let (vocab, docs) = prepare(ds, hp)?;
    let (v, d) = (vocab.len(), hp.dim);
    let mut rng = seed::rng(hp.seed, "fasttext-init", &[]);
    let mut words = uniform_table(v, d, &mut rng);
    let mut ngrams = uniform_table(hp.buckets, d, &mut rng);
    let mut out = Tensor::zeros(&[v, d]);
    let comps: Vec<Vec<(bool, usize)>> = (0..v as u32)
        .map(|id| if is_special(id) { vec![(false, id as usize)] } else { components(Some(id), vocab.token(id), hp) })
        .collect();
    let sampler = NegSampler::new(&token_counts(v, &docs))?;
    let total: usize = docs.iter().map(Vec::len).sum::<usize>() * hp.epochs;
    let mut done = 0;
    let mut trace = Vec::with_capacity(hp.epochs);
    let (mut h, mut tmp, mut neu1e) = (vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    for epoch in 0..hp.epochs {
        let mut rng = seed::rng(hp.seed, "fasttext-epoch", &[epoch as u64]);
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
                    compose(&words, &ngrams, &comps[w as usize], &mut tmp);
                    axpy(1.0 / ctx.len() as f64, &tmp, &mut h);
                }
                neu1e.fill(0.0);
                let lr = decayed(hp.learning_rate, done, total);
                loss += sgns_step(&h, doc[c], &mut out, &sampler, hp.negatives, lr, &mut rng, &mut neu1e);
                n += 1;
                for &w in &ctx {
                    let cs = &comps[w as usize];
                    let share = 1.0 / cs.len() as f64;
                    for &(is_ngram, row) in cs {
                        let target = if is_ngram { ngrams.row_mut(row) } else { words.row_mut(row) };
                        axpy(share, &neu1e, target);
                    }
                }
            }
        }
        trace.push(loss / n.max(1) as f64);
    }
    Ok(EmbeddingMatrix {
        kind: BaselineKind::Fasttext,
        vocab,
        hp: hp.clone(),
        words,
        aux: vec![("ngrams".into(), ngrams), ("output".into(), out)],
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ngrams_use_boundary_markers() {
        assert_eq!(char_ngrams("knee", 3, 3), vec!["<kn", "kne", "nee", "ee>"]);
        assert_eq!(char_ngrams("knee", 5, 6), Vec::<String>::new());
        assert_eq!(char_ngrams("knee", 4, 6), vec!["<kne", "knee", "nee>", "<knee", "knee>", "<knee>"]);
        assert!(char_ngrams("ab", 3, 3).is_empty());
        assert_eq!(char_ngrams("abc", 3, 5).len(), 3 + 2 + 1);
    }

    #[test]
    fn bad_ranges_are_rejected() {
        assert!(check(&BaselineHyperparams { buckets: 0, ..Default::default() }).is_err());
        assert!(check(&BaselineHyperparams { min_n: 4, max_n: 3, ..Default::default() }).is_err());
    }
}
