use periloom::corpus::{corpus_stats, generate_corpus, CorpusSpec};

fn main() {
    let spec = CorpusSpec::cohort_scale(1);
    let ds = generate_corpus(&spec).unwrap();
    let s = corpus_stats(&ds).unwrap();
    println!("{}", serde_json::to_string_pretty(&s).unwrap());
    println!("{}", ds.notes[..5].iter().map(|n| n.text.clone()).collect::<Vec<_>>().join("\n"));
}
