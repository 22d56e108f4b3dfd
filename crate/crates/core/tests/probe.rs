use periloom::corpus::{generate_corpus, CorpusSpec};
use periloom::error::Error;
use periloom::finetune::{pretrain, FineTuneConfig, FineTunedModel};
use periloom::probe::{complete, fill_mask, ProbeOutput, StopReason};
use periloom::text::{build_vocab, encode, Style, MASK};
use periloom::transformer::{forward, ArchConfig, ModelParams, Variant};
use proptest::prelude::*;

const TABLE_PROMPT: &str = "[MASK] underwent surgery to remove tumor.";

fn model(variant: Variant, max_len: usize, trained: bool) -> FineTunedModel {
    let mut spec = CorpusSpec::planted(40, 0.3, 0.9, 3);
    spec.vocab_size = 300;
    let ds = generate_corpus(&spec).unwrap();
    let vocab = build_vocab(&ds, 1).unwrap();
    let arch = ArchConfig { layers: 1, d_model: 16, heads: 2, d_ff: 32, max_len, ..ArchConfig::toy(variant, vocab.len(), 5) };
    if trained {
        let cfg = FineTuneConfig { epochs: 2, batch_size: 8, learning_rate: 3e-3, seed: 1, ..Default::default() };
        pretrain(&arch, &vocab, &ds, &cfg).unwrap().0
    } else {
        FineTunedModel::new(ModelParams::init(&arch).unwrap(), vocab).unwrap()
    }
}

fn candidates(r: &periloom::probe::ProbeResult) -> &[periloom::probe::Candidate] {
    match &r.output {
        ProbeOutput::FillMask { candidates } => candidates,
        _ => panic!("not a fill-mask result"),
    }
}

fn completion(r: &periloom::probe::ProbeResult) -> (&[u32], StopReason) {
    match &r.output {
        ProbeOutput::Completion { ids, stop, .. } => (ids, *stop),
        _ => panic!("not a completion"),
    }
}

#[test]
fn fill_mask_ranks_tokens_for_the_table_prompt() {
    let m = model(Variant::Encoder, 16, true);
    let r = fill_mask(&m, TABLE_PROMPT, 5).unwrap();
    let c = candidates(&r);
    assert_eq!(c.len(), 5);
    assert!(c.windows(2).all(|w| w[0].probability >= w[1].probability));
    assert!(c.iter().map(|c| c.probability).sum::<f64>() <= 1.0 + 1e-12);
    assert!(r.to_string().contains("1. "));
    let json = serde_json::to_string(&r).unwrap();
    assert_eq!(serde_json::from_str::<periloom::probe::ProbeResult>(&json).unwrap(), r);
}

#[test]
fn full_vocabulary_probabilities_sum_to_one() {
    let m = model(Variant::Encoder, 16, false);
    let v = m.vocab.len();
    let r = fill_mask(&m, TABLE_PROMPT, v).unwrap();
    let total: f64 = candidates(&r).iter().map(|c| c.probability).sum();
    assert!((total - 1.0).abs() < 1e-6);
    assert_eq!(fill_mask(&m, TABLE_PROMPT, v + 10).unwrap(), r);
}

#[test]
fn top_candidate_is_the_forward_argmax() {
    let m = model(Variant::Encoder, 16, true);
    for prompt in [TABLE_PROMPT, "left knee [MASK] with debridement", "[mask]"] {
        let r = fill_mask(&m, prompt, 1).unwrap();
        let seq = encode(prompt, &m.vocab, 16, Style::Encoder).unwrap();
        let pos = seq.active().iter().position(|&i| i == MASK).unwrap();
        let out = forward(&m.params, &[seq]).unwrap().remove(0);
        let v = m.vocab.len();
        let row = &out.logits[pos * v..(pos + 1) * v];
        let argmax = (0..v).fold(0, |b, i| if row[i] > row[b] { i } else { b });
        assert_eq!(candidates(&r)[0].id as usize, argmax, "{prompt}");
    }
}

#[test]
fn fill_mask_contract_errors() {
    let m = model(Variant::Encoder, 16, false);
    assert!(matches!(fill_mask(&m, "no mask here", 3), Err(Error::Precondition(_))));
    assert!(matches!(fill_mask(&m, "[MASK] and [MASK]", 3), Err(Error::Precondition(_))));
    assert!(fill_mask(&m, TABLE_PROMPT, 0).is_err());
    let long = format!("[MASK] {}", "knee ".repeat(20));
    assert!(fill_mask(&m, &long, 3).is_err());
    let d = model(Variant::Decoder, 16, false);
    assert!(matches!(fill_mask(&d, TABLE_PROMPT, 3), Err(Error::Incompatible(_))));
    assert!(matches!(complete(&m, "left knee", 3), Err(Error::Incompatible(_))));
}

#[test]
fn greedy_completion_is_deterministic() {
    let m = model(Variant::Decoder, 16, true);
    let a = complete(&m, "left knee", 6).unwrap();
    assert_eq!(a, complete(&m, "left knee", 6).unwrap());
    let (ids, _) = completion(&a);
    assert!(!ids.is_empty() && ids.len() <= 6);
}

#[test]
fn budget_of_one_appends_one_token() {
    let m = model(Variant::Decoder, 16, false);
    let r = complete(&m, "left knee arthroscopy", 1).unwrap();
    assert_eq!(completion(&r).0.len(), 1);
}

#[test]
fn completion_stops_at_max_len() {
    let m = model(Variant::Decoder, 8, false);
    // [BOS] + 6 words fills positions 0..=6, ending at max_len − 1.
    let r = complete(&m, "left knee arthroscopy with partial debridement", 10).unwrap();
    let (ids, stop) = completion(&r);
    assert!(ids.len() <= 1);
    if ids.len() == 1 && ids[0] != periloom::text::EOS {
        assert_eq!(stop, StopReason::MaxLen);
    }
    let r = complete(&m, "left knee arthroscopy with partial debridement today", 10).unwrap();
    assert_eq!(completion(&r), (&[][..], StopReason::MaxLen));
    assert!(complete(&m, "a b c d e f g h", 1).is_err());
    assert!(complete(&m, "", 1).is_err());
    assert!(complete(&m, "knee", 0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn completion_is_prefix_monotone_in_budget(b in 1usize..8, prompt in prop::sample::select(vec!["left knee", "right hip arthroplasty", "open", "excision of"])) {
        let m = model(Variant::Decoder, 24, true);
        let short = complete(&m, prompt, b).unwrap();
        let long = complete(&m, prompt, b + 1).unwrap();
        let (s, _) = completion(&short);
        let (l, _) = completion(&long);
        prop_assert_eq!(s, &l[..s.len()]);
    }
}
