//! Qualitative probes: single-token fill-mask for encoders and greedy
//! completion for decoders.

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::finetune::FineTunedModel;
use crate::tensor::ops::softmax_inplace;
use crate::text::{tokenize, TokenSeq, BOS, CLS, EOS, MASK, SEP};
use crate::transformer::{forward, Variant};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub token: String,
    pub id: u32,
    pub probability: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Eos,
    Budget,
    /// The sequence reached the model's maximum length.
    MaxLen,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "probe", rename_all = "snake_case")]
pub enum ProbeOutput {
    FillMask { candidates: Vec<Candidate> },
    Completion { tokens: Vec<String>, ids: Vec<u32>, text: String, stop: StopReason },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub prompt: String,
    pub output: ProbeOutput,
    pub provenance: Value,
}

fn sequence(ids: Vec<u32>) -> TokenSeq {
    let len = ids.len();
    TokenSeq { attention: vec![1; len], ids, len }
}

fn expect_variant(model: &FineTunedModel, v: Variant, probe: &str) -> Result<()> {
    if model.params.config.variant != v {
        return Err(Error::Incompatible(format!("{probe} needs a {v:?} model, got {:?}", model.params.config.variant).to_lowercase()));
    }
    Ok(())
}

/// Rank the vocabulary at the single `[MASK]` of `prompt`; top `k` by
/// probability, ties by token id.
pub fn fill_mask(model: &FineTunedModel, prompt: &str, k: usize) -> Result<ProbeResult> {
    expect_variant(model, Variant::Encoder, "fill-mask")?;
    if k == 0 {
        return Err(Error::field("k", "must be at least 1"));
    }
    let words: Vec<u32> = tokenize(prompt).iter().map(|t| model.vocab.id(t)).collect();
    let masks = words.iter().filter(|&&id| id == MASK).count();
    if masks != 1 {
        return Err(Error::precondition(format!("prompt must contain exactly one [MASK], found {masks}")));
    }
    let max_len = model.params.config.max_len;
    if words.len() + 2 > max_len {
        return Err(Error::precondition(format!("prompt has {} tokens; the model takes at most {}", words.len(), max_len - 2)));
    }
    let pos = 1 + words.iter().position(|&id| id == MASK).unwrap();
    let mut ids = vec![CLS];
    ids.extend(words);
    ids.push(SEP);
    let out = forward(&model.params, &[sequence(ids)])?.remove(0);
    let v = model.params.config.vocab_size;
    let mut probs = out.logits[pos * v..(pos + 1) * v].to_vec();
    softmax_inplace(&mut probs);
    let mut order: Vec<usize> = (0..v).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    let candidates = order
        .into_iter()
        .take(k.min(v))
        .map(|i| Candidate { token: model.vocab.token(i as u32).to_string(), id: i as u32, probability: probs[i] })
        .collect();
    Ok(ProbeResult { prompt: prompt.to_string(), output: ProbeOutput::FillMask { candidates }, provenance: model.provenance.clone() })
}

/// Greedy (argmax, ties by lowest id) continuation of `prompt`, stopping at
/// `[EOS]`, after `max_new_tokens`, or at the model's maximum length.
pub fn complete(model: &FineTunedModel, prompt: &str, max_new_tokens: usize) -> Result<ProbeResult> {
    expect_variant(model, Variant::Decoder, "completion")?;
    if max_new_tokens == 0 {
        return Err(Error::field("max_new_tokens", "must be at least 1"));
    }
    let words = tokenize(prompt);
    if words.is_empty() {
        return Err(Error::precondition("prompt is empty"));
    }
    let max_len = model.params.config.max_len;
    let mut ids = vec![BOS];
    ids.extend(words.iter().map(|t| model.vocab.id(t)));
    if ids.len() > max_len {
        return Err(Error::precondition(format!("prompt has {} tokens; the model takes at most {}", words.len(), max_len - 1)));
    }
    let v = model.params.config.vocab_size;
    let mut generated = Vec::new();
    let stop = loop {
        if generated.len() == max_new_tokens {
            break StopReason::Budget;
        }
        if ids.len() == max_len {
            break StopReason::MaxLen;
        }
        let out = forward(&model.params, &[sequence(ids.clone())])?.remove(0);
        let last = &out.logits[(out.len - 1) * v..out.len * v];
        let next = (0..v).fold(0, |b, i| if last[i] > last[b] { i } else { b }) as u32;
        ids.push(next);
        generated.push(next);
        if next == EOS {
            break StopReason::Eos;
        }
    };
    let tokens: Vec<String> = generated.iter().map(|&i| model.vocab.token(i).to_string()).collect();
    let text = generated.iter().filter(|&&i| i != EOS).map(|&i| model.vocab.token(i)).collect::<Vec<_>>().join(" ");
    Ok(ProbeResult {
        prompt: prompt.to_string(),
        output: ProbeOutput::Completion { tokens, ids: generated, text, stop },
        provenance: model.provenance.clone(),
    })
}

impl fmt::Display for ProbeResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "prompt: {}", self.prompt)?;
        match &self.output {
            ProbeOutput::FillMask { candidates } => {
                for (r, c) in candidates.iter().enumerate() {
                    writeln!(f, "{:>3}. {:<24} {:.6}", r + 1, c.token, c.probability)?;
                }
            }
            ProbeOutput::Completion { text, stop, .. } => {
                writeln!(f, "completion: {text}")?;
                writeln!(f, "stop: {stop:?}")?;
            }
        }
        Ok(())
    }
}
