//! Tokenization, vocabularies, fixed-length encoding and MLM corruption.

use std::collections::HashMap;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{sha256_hex, write_atomic};
use crate::corpus::Dataset;
use crate::error::{Error, Result};
use crate::seed;

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const CLS: u32 = 2;
pub const SEP: u32 = 3;
pub const MASK: u32 = 4;
pub const BOS: u32 = 5;
pub const EOS: u32 = 6;
pub const SPECIALS: [&str; 7] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "[BOS]", "[EOS]"];
pub const N_SPECIAL: u32 = SPECIALS.len() as u32;

/// Whitespace tokenization with lowercasing.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    min_count: usize,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    specials: Vec<String>,
    tokens: Vec<String>,
    min_count: usize,
}

impl Vocabulary {
    /// Build from raw texts. Tokens seen fewer than `min_count` times map to UNK;
    /// order is frequency descending, then lexicographic.
    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>, min_count: usize) -> Result<Self> {
        if min_count == 0 {
            return Err(Error::field("min_count", "must be at least 1"));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        let mut docs = 0;
        for text in texts {
            docs += 1;
            for tok in tokenize(text) {
                *counts.entry(tok).or_default() += 1;
            }
        }
        if docs == 0 {
            return Err(Error::EmptyDataset);
        }
        let mut kept: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(t, c)| *c >= min_count && !SPECIALS.iter().any(|s| s.eq_ignore_ascii_case(t)))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Ok(Self::from_tokens(kept.into_iter().map(|(t, _)| t).collect(), min_count))
    }

    fn from_tokens(words: Vec<String>, min_count: usize) -> Self {
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        tokens.extend(words);
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Vocabulary { tokens, index, min_count }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn min_count(&self) -> usize {
        self.min_count
    }

    /// Id of a token; specials are matched case-insensitively, unknowns give UNK.
    pub fn id(&self, token: &str) -> u32 {
        if let Some(&i) = self.index.get(token) {
            return i;
        }
        SPECIALS.iter().position(|s| s.eq_ignore_ascii_case(token)).map(|i| i as u32).unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    /// Non-special tokens in id order.
    pub fn words(&self) -> &[String] {
        &self.tokens[N_SPECIAL as usize..]
    }

    pub fn to_json(&self) -> String {
        let f = VocabFile {
            specials: SPECIALS.iter().map(|s| s.to_string()).collect(),
            tokens: self.words().to_vec(),
            min_count: self.min_count,
        };
        serde_json::to_string(&f).expect("vocabulary serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: VocabFile = serde_json::from_str(s)?;
        if f.specials != SPECIALS {
            return Err(Error::Format(format!("unexpected special tokens {:?}", f.specials)));
        }
        Ok(Self::from_tokens(f.tokens, f.min_count))
    }

    pub fn hash(&self) -> String {
        sha256_hex(self.to_json().as_bytes())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), self.to_json().as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

pub fn build_vocab(ds: &Dataset, min_count: usize) -> Result<Vocabulary> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Vocabulary::from_texts(ds.texts(), min_count)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Style {
    /// `[CLS] … [SEP]`
    Encoder,
    /// `[BOS] … [EOS]`
    Decoder,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSeq {
    pub ids: Vec<u32>,
    pub attention: Vec<u8>,
    pub len: usize,
}

impl TokenSeq {
    /// The non-PAD prefix.
    pub fn active(&self) -> &[u32] {
        &self.ids[..self.len]
    }
}

pub fn encode(text: &str, vocab: &Vocabulary, max_len: usize, style: Style) -> Result<TokenSeq> {
    if max_len < 3 {
        return Err(Error::field("max_len", "must be at least 3"));
    }
    let (open, close) = match style {
        Style::Encoder => (CLS, SEP),
        Style::Decoder => (BOS, EOS),
    };
    let mut ids = Vec::with_capacity(max_len);
    ids.push(open);
    ids.extend(tokenize(text).iter().take(max_len - 2).map(|t| vocab.id(t)));
    ids.push(close);
    let len = ids.len();
    ids.resize(max_len, PAD);
    let attention = (0..max_len).map(|i| u8::from(i < len)).collect();
    Ok(TokenSeq { ids, attention, len })
}

/// Lowercased token string of the non-special ids.
pub fn decode(seq: &TokenSeq, vocab: &Vocabulary) -> String {
    seq.active()
        .iter()
        .filter(|&&id| !matches!(id, PAD | CLS | SEP | BOS | EOS))
        .map(|&id| vocab.token(id))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn is_special(id: u32) -> bool {
    id < N_SPECIAL
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedSeq {
    pub input: TokenSeq,
    /// Original id at each flagged position, `None` elsewhere.
    pub targets: Vec<Option<u32>>,
}

impl MaskedSeq {
    pub fn flagged(&self) -> impl Iterator<Item = usize> + '_ {
        self.targets.iter().enumerate().filter_map(|(i, t)| t.map(|_| i))
    }

    pub fn n_flagged(&self) -> usize {
        self.targets.iter().filter(|t| t.is_some()).count()
    }
}

/// BERT-style corruption. Each eligible (non-special) position is selected
/// with probability `rate`; selected positions become MASK (80%), a random
/// non-special token (10%) or stay unchanged (10%). When `rate > 0` and an
/// eligible position exists, the draw is conditioned on at least one selection.
pub fn apply_mlm_mask(seq: &TokenSeq, vocab_size: usize, rate: f64, seed: u64) -> Result<MaskedSeq> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::field("mlm_rate", "must lie in [0, 1]"));
    }
    let mut rng = seed::rng(seed, "mlm-mask", &[]);
    let eligible: Vec<usize> = (0..seq.len).filter(|&i| !is_special(seq.ids[i])).collect();
    let mut selected = vec![false; eligible.len()];
    if rate > 0.0 && !eligible.is_empty() {
        // Sample the first selected index from its conditional (truncated
        // geometric) law, then the remaining positions independently.
        let n = eligible.len() as i32;
        let q = 1.0 - rate;
        let none = q.powi(n);
        let u: f64 = rng.random();
        let mut first = eligible.len() - 1;
        for j in 0..eligible.len() {
            // P(first ≤ j | at least one) = (1 - q^(j+1)) / (1 - q^n)
            if u * (1.0 - none) < 1.0 - q.powi(j as i32 + 1) {
                first = j;
                break;
            }
        }
        selected[first] = true;
        for s in selected.iter_mut().skip(first + 1) {
            *s = rng.random::<f64>() < rate;
        }
    }
    let mut input = seq.clone();
    let mut targets = vec![None; seq.ids.len()];
    let n_words = vocab_size.saturating_sub(N_SPECIAL as usize);
    for (&pos, _) in eligible.iter().zip(&selected).filter(|(_, &s)| s) {
        targets[pos] = Some(seq.ids[pos]);
        let r: f64 = rng.random();
        if r < 0.8 {
            input.ids[pos] = MASK;
        } else if r < 0.9 && n_words > 0 {
            input.ids[pos] = N_SPECIAL + rng.random_range(0..n_words as u32);
        }
    }
    Ok(MaskedSeq { input, targets })
}

/// Encoder pair for next-sentence prediction: `[CLS] a [SEP] b [SEP]`.
pub fn encode_pair(a: &str, b: &str, vocab: &Vocabulary, max_len: usize) -> Result<TokenSeq> {
    if max_len < 3 {
        return Err(Error::field("max_len", "must be at least 3"));
    }
    let mut ids = vec![CLS];
    let room = max_len - 3;
    let ta = tokenize(a);
    let tb = tokenize(b);
    let na = ta.len().min(room.div_ceil(2).max(room.saturating_sub(tb.len())));
    let nb = tb.len().min(room - na);
    ids.extend(ta.iter().take(na).map(|t| vocab.id(t)));
    ids.push(SEP);
    ids.extend(tb.iter().take(nb).map(|t| vocab.id(t)));
    ids.push(SEP);
    let len = ids.len();
    ids.resize(max_len, PAD);
    let attention = (0..max_len).map(|i| u8::from(i < len)).collect();
    Ok(TokenSeq { ids, attention, len })
}

/// Sentences of a note, split after `.`, `!` or `?`.
pub fn sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        cur.push(ch);
        if matches!(ch, '.' | '!' | '?') {
            if !cur.trim().is_empty() {
                out.push(cur.trim().to_string());
            }
            cur.clear();
        }
    }
    if !cur.trim().is_empty() {
        out.push(cur.trim().to_string());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vocab(texts: &[&str], min_count: usize) -> Vocabulary {
        Vocabulary::from_texts(texts.iter().copied(), min_count).unwrap()
    }

    #[test]
    fn min_count_maps_rare_to_unk() {
        let v = vocab(&["a a b"], 2);
        assert_eq!(v.words(), &["a".to_string()]);
        assert_eq!(v.id("b"), UNK);
        assert_eq!(v.id("a"), N_SPECIAL);
        assert_eq!(vocab(&["x"], 1).len(), SPECIALS.len() + 1);
    }

    #[test]
    fn ties_are_lexicographic() {
        let v = vocab(&["d c b a", "a b"], 1);
        assert_eq!(v.words(), &["a", "b", "c", "d"]);
        assert_eq!(vocab(&["b a a c c"], 1).words(), &["a", "c", "b"]);
    }

    #[test]
    fn errors() {
        assert!(matches!(Vocabulary::from_texts(std::iter::empty(), 1), Err(Error::EmptyDataset)));
        assert!(Vocabulary::from_texts(["a"], 0).is_err());
        let v = vocab(&["a"], 1);
        assert!(encode("a", &v, 2, Style::Encoder).is_err());
        assert!(apply_mlm_mask(&encode("a", &v, 4, Style::Encoder).unwrap(), v.len(), 1.5, 0).is_err());
    }

    #[test]
    fn encoder_layout() {
        let v = vocab(&["knee arthroplasty"], 1);
        let s = encode("Knee arthroplasty", &v, 8, Style::Encoder).unwrap();
        assert_eq!(s.ids, vec![CLS, v.id("knee"), v.id("arthroplasty"), SEP, PAD, PAD, PAD, PAD]);
        assert_eq!(s.attention, vec![1, 1, 1, 1, 0, 0, 0, 0]);
        assert_eq!(s.len, 4);
    }

    #[test]
    fn truncation_and_oov() {
        let v = vocab(&["a b c d e f"], 1);
        let s = encode("a b c d e f", &v, 5, Style::Decoder).unwrap();
        assert_eq!(s.ids.len(), 5);
        assert_eq!(s.ids[0], BOS);
        assert_eq!(*s.ids.last().unwrap(), EOS);
        assert_eq!(decode(&s, &v), "a b c");
        assert_eq!(encode("zzz", &v, 5, Style::Encoder).unwrap().ids[1], UNK);
        let empty = encode("", &v, 4, Style::Encoder).unwrap();
        assert_eq!(empty.ids, vec![CLS, SEP, PAD, PAD]);
        assert_eq!(encode("[MASK] a", &v, 5, Style::Encoder).unwrap().ids[1], MASK);
    }

    #[test]
    fn vocab_json_round_trip() {
        let v = vocab(&["a b b", "c"], 1);
        let back = Vocabulary::from_json(&v.to_json()).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.hash(), v.hash());
    }

    #[test]
    fn mlm_rate_zero_is_identity() {
        let v = vocab(&["a b c"], 1);
        let s = encode("a b c", &v, 8, Style::Encoder).unwrap();
        let m = apply_mlm_mask(&s, v.len(), 0.0, 3).unwrap();
        assert_eq!(m.input, s);
        assert_eq!(m.n_flagged(), 0);
    }

    #[test]
    fn mlm_split_80_10_10() {
        let words: Vec<String> = (0..500).map(|i| format!("w{i}")).collect();
        let text = words.join(" ");
        let v = Vocabulary::from_texts([text.as_str()], 1).unwrap();
        let (mut masked, mut random, mut kept, mut total) = (0usize, 0usize, 0usize, 0usize);
        for s in 0..50u64 {
            let chunk = words[(s as usize * 10) % 300..][..200].join(" ");
            let seq = encode(&chunk, &v, 202, Style::Encoder).unwrap();
            let m = apply_mlm_mask(&seq, v.len(), 1.0, s).unwrap();
            assert_eq!(m.n_flagged(), 200);
            for p in m.flagged() {
                total += 1;
                match m.input.ids[p] {
                    MASK => masked += 1,
                    id if id == seq.ids[p] => kept += 1,
                    _ => random += 1,
                }
            }
        }
        assert_eq!(total, 10_000);
        let frac = |c: usize| c as f64 / total as f64;
        assert!((frac(masked) - 0.8).abs() <= 0.02, "{masked}");
        assert!((frac(random) - 0.1).abs() <= 0.02, "{random}");
        assert!((frac(kept) - 0.1).abs() <= 0.02, "{kept}");
    }

    #[test]
    fn sentence_split_and_pairs() {
        assert_eq!(sentences("Knee repair. Hip scope"), vec!["Knee repair.", "Hip scope"]);
        let v = vocab(&["a b c d"], 1);
        let p = encode_pair("a b", "c d", &v, 8).unwrap();
        assert_eq!(&p.ids[..7], &[CLS, v.id("a"), v.id("b"), SEP, v.id("c"), v.id("d"), SEP]);
        let p = encode_pair("a b c d", "a b c d", &v, 7).unwrap();
        assert_eq!(p.len, 7);
        assert_eq!(p.ids.iter().filter(|&&i| i == SEP).count(), 2);
    }

    proptest! {
        #[test]
        fn mlm_invariants(words in proptest::collection::vec("[a-e]{1,3}", 0..20), rate in 0.0f64..1.0, seed in any::<u64>()) {
            let text = words.join(" ");
            let v = Vocabulary::from_texts(["a b c d e aa bb", text.as_str()], 1).unwrap();
            let seq = encode(&text, &v, 16, Style::Encoder).unwrap();
            let m = apply_mlm_mask(&seq, v.len(), rate, seed).unwrap();
            prop_assert_eq!(&m, &apply_mlm_mask(&seq, v.len(), rate, seed).unwrap());
            let eligible = (0..seq.len).filter(|&i| !is_special(seq.ids[i])).count();
            if rate > 0.0 && eligible > 0 {
                prop_assert!(m.n_flagged() >= 1);
            }
            for (i, t) in m.targets.iter().enumerate() {
                match t {
                    Some(orig) => {
                        prop_assert_eq!(*orig, seq.ids[i]);
                        prop_assert!(!is_special(seq.ids[i]));
                    }
                    None => prop_assert_eq!(m.input.ids[i], seq.ids[i]),
                }
            }
        }

        #[test]
        fn decode_inverts_encode(words in proptest::collection::vec("[a-z]{1,6}", 0..12)) {
            let text = words.join(" ");
            let v = Vocabulary::from_texts([text.as_str(), "x"], 1).unwrap();
            let seq = encode(&text, &v, 10, Style::Encoder).unwrap();
            let expect = tokenize(&text).into_iter().take(8).collect::<Vec<_>>().join(" ");
            prop_assert_eq!(decode(&seq, &v), expect);
        }
    }
}
