use periloom::baselines::{
    embed_document, infer_doc2vec, train_baseline, train_cbow, train_doc2vec, train_fasttext, BaselineHyperparams,
    BaselineKind, EmbeddingMatrix,
};
use periloom::corpus::{generate_corpus, ClinicalNote, CorpusSpec, Dataset, Label, TaskId};
use periloom::error::Error;
use periloom::tensor::ops::cosine;
use proptest::prelude::*;

fn dataset(texts: &[String]) -> Dataset {
    let mut ds = Dataset::new(vec![TaskId::binary("dvt")]);
    for (i, t) in texts.iter().enumerate() {
        ds.notes.push(ClinicalNote { id: format!("d{i}"), text: t.clone(), labels: vec![Label::Missing] });
    }
    ds
}

fn small_hp() -> BaselineHyperparams {
    BaselineHyperparams { dim: 16, window: 2, epochs: 10, seed: 4, ..Default::default() }
}

/// "knee" and "patella" appear in identical contexts; "sutured" never does.
fn substitution_corpus() -> Dataset {
    let frames = [
        ("left", "arthroscopy with debridement"),
        ("right", "arthroscopy with meniscectomy"),
        ("left", "replacement under spinal"),
        ("right", "fracture fixation planned"),
    ];
    let mut texts = Vec::new();
    for rep in 0..30 {
        for (a, b) in frames {
            for organ in ["knee", "patella"] {
                texts.push(format!("{a} {organ} {b}"));
            }
        }
        texts.push(format!("wound sutured closed layer {rep}"));
    }
    dataset(&texts)
}

#[test]
fn cbow_places_substitutable_tokens_together() {
    let m = train_cbow(&substitution_corpus(), &small_hp()).unwrap();
    let v = |w: &str| m.token_vector(w).unwrap();
    let same = cosine(&v("knee"), &v("patella"));
    let other = cosine(&v("knee"), &v("sutured"));
    assert!(same > other, "knee~patella {same} vs knee~sutured {other}");
    assert!(m.is_finite());
}

#[test]
fn cbow_zero_epochs_is_the_seeded_init() {
    let hp = BaselineHyperparams { epochs: 0, ..small_hp() };
    let a = train_cbow(&substitution_corpus(), &hp).unwrap();
    let b = train_cbow(&substitution_corpus(), &hp).unwrap();
    assert_eq!(a, b);
    let half = 0.5 / hp.dim as f64;
    assert!(a.words.data.iter().all(|v| v.abs() <= half));
    assert!(a.aux("output").unwrap().data.iter().all(|&v| v == 0.0));
    let trained = train_cbow(&substitution_corpus(), &small_hp()).unwrap();
    assert_ne!(trained.words, a.words);
}

#[test]
fn dimension_one_trains() {
    for kind in BaselineKind::ALL {
        let m = train_baseline(kind, &substitution_corpus(), &BaselineHyperparams { dim: 1, ..small_hp() }).unwrap();
        assert!(m.is_finite(), "{kind:?}");
        assert_eq!(embed_document(&m, "left knee").unwrap().len(), 1);
    }
}

#[test]
fn cbow_window_must_fit_some_document() {
    let ds = dataset(&["a b c".to_string(), "d e".to_string()]);
    let err = train_cbow(&ds, &BaselineHyperparams { window: 3, ..small_hp() }).unwrap_err();
    assert!(matches!(err, Error::InvalidField { ref field, .. } if field == "window"));
    assert!(matches!(train_cbow(&Dataset::new(vec![]), &small_hp()), Err(Error::EmptyDataset)));
}

#[test]
fn fasttext_composes_unseen_tokens_and_shares_morphology() {
    let mut texts = Vec::new();
    for i in 0..40 {
        texts.push(format!("arthroscopy of knee {i}"));
        texts.push(format!("arthroscopic repair of shoulder {i}"));
        texts.push(format!("laminectomy lumbar level {i}"));
    }
    let m = train_fasttext(&dataset(&texts), &small_hp()).unwrap();
    let oov = m.token_vector("arthroscopically").unwrap();
    assert!(oov.iter().any(|&v| v != 0.0));
    let v = |w: &str| m.token_vector(w).unwrap();
    let shared = cosine(&v("arthroscopy"), &v("arthroscopic"));
    let unrelated = cosine(&v("arthroscopy"), &v("laminectomy"));
    assert!(shared > unrelated, "{shared} vs {unrelated}");
}

#[test]
fn fasttext_short_word_uses_whole_word_vector_only() {
    let ds = dataset(&["ab cd efgh".to_string(), "ab efgh cd".to_string()]);
    let hp = BaselineHyperparams { min_n: 3, max_n: 3, window: 1, ..small_hp() };
    let m = train_fasttext(&ds, &hp).unwrap();
    let id = m.vocab.id("ab") as usize;
    assert_eq!(m.token_vector("ab").unwrap(), m.words.row(id).to_vec());
    assert!(matches!(train_fasttext(&ds, &BaselineHyperparams { buckets: 0, ..hp }), Err(Error::InvalidField { .. })));
}

#[test]
fn doc2vec_inference_is_deterministic_and_duplicates_cluster() {
    let mut texts: Vec<String> = (0..30).map(|i| format!("routine note {i} with filler words")).collect();
    let dup = "emergent laparotomy for perforated viscus with peritonitis".to_string();
    texts.push(dup.clone());
    texts.push(dup.clone());
    texts.push("elective cataract extraction with lens implant right eye".to_string());
    let hp = BaselineHyperparams { epochs: 40, ..small_hp() };
    let m = train_doc2vec(&dataset(&texts), &hp).unwrap();
    let a = infer_doc2vec(&m, &dup).unwrap();
    assert_eq!(a, infer_doc2vec(&m, &dup).unwrap());
    let docs = m.aux("docs").unwrap();
    let n = texts.len();
    let dup_cos = cosine(docs.row(n - 3), docs.row(n - 2));
    let other_cos = cosine(docs.row(n - 3), docs.row(n - 1));
    assert!(dup_cos > other_cos, "{dup_cos} vs {other_cos}");
    assert!(infer_doc2vec(&m, "   ").is_err());
}

#[test]
fn doc2vec_zero_inference_epochs_is_the_seeded_init() {
    let hp = BaselineHyperparams { infer_epochs: 0, ..small_hp() };
    let m = train_doc2vec(&substitution_corpus(), &hp).unwrap();
    let a = infer_doc2vec(&m, "left knee").unwrap();
    assert_eq!(a, infer_doc2vec(&m, "left knee").unwrap());
    assert!(a.iter().all(|v| v.abs() <= 0.5 / hp.dim as f64));
    assert_ne!(a, infer_doc2vec(&m, "right knee").unwrap());
}

#[test]
fn word_level_pooling_contracts() {
    let ds = substitution_corpus();
    for kind in [BaselineKind::Cbow, BaselineKind::Glove, BaselineKind::Fasttext] {
        let m = train_baseline(kind, &ds, &small_hp()).unwrap();
        assert_eq!(embed_document(&m, "knee").unwrap(), m.token_vector("knee").unwrap());
        let one = embed_document(&m, "knee").unwrap();
        let two = embed_document(&m, "knee knee").unwrap();
        one.iter().zip(&two).for_each(|(a, b)| assert!((a - b).abs() < 1e-15));
        assert_eq!(embed_document(&m, "").unwrap(), vec![0.0; 16]);
        assert!(embed_document(&m, "zzunseen").unwrap().iter().all(|v| v.is_finite()));
    }
}

#[test]
fn training_is_deterministic_and_checkpoints_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let ds = substitution_corpus();
    for kind in BaselineKind::ALL {
        let a = train_baseline(kind, &ds, &small_hp()).unwrap();
        assert_eq!(a, train_baseline(kind, &ds, &small_hp()).unwrap(), "{kind:?}");
        let path = dir.path().join(format!("{}.pltc", kind.name()));
        a.save(&path).unwrap();
        let back = EmbeddingMatrix::load(&path).unwrap();
        assert_eq!(back, a);
        assert_eq!(embed_document(&back, "left knee arthroscopy").unwrap(), embed_document(&a, "left knee arthroscopy").unwrap());
    }
}

#[test]
fn planted_signal_shifts_mean_document_vectors() {
    let mut spec = CorpusSpec::planted(300, 0.3, 1.0, 21);
    spec.vocab_size = 300;
    let ds = generate_corpus(&spec).unwrap();
    let m = train_cbow(&ds, &small_hp()).unwrap();
    let t = ds.task_index("dvt").unwrap();
    let (mut pos, mut neg) = (vec![0.0; 16], vec![0.0; 16]);
    let (mut np, mut nn) = (0.0, 0.0);
    for n in &ds.notes {
        let v = embed_document(&m, &n.text).unwrap();
        if n.labels[t].is_positive() {
            pos.iter_mut().zip(&v).for_each(|(a, b)| *a += b);
            np += 1.0;
        } else {
            neg.iter_mut().zip(&v).for_each(|(a, b)| *a += b);
            nn += 1.0;
        }
    }
    let gap: f64 = pos.iter().zip(&neg).map(|(p, q)| (p / np - q / nn).powi(2)).sum::<f64>().sqrt();
    assert!(gap > 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn word_level_embedding_is_order_invariant(perm in Just(vec!["left", "knee", "arthroscopy", "with", "debridement"]).prop_shuffle()) {
        let m = train_cbow(&substitution_corpus(), &BaselineHyperparams { epochs: 1, ..small_hp() }).unwrap();
        let base = embed_document(&m, "left knee arthroscopy with debridement").unwrap();
        let shuffled = embed_document(&m, &perm.join(" ")).unwrap();
        for (a, b) in base.iter().zip(&shuffled) {
            prop_assert!((a - b).abs() < 1e-15);
        }
    }
}
