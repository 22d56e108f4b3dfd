use std::path::PathBuf;
use std::process::{Command, Output};

use periloom::eval::{EvalReport, ReportSummary};
use periloom_cli::artifacts::Features;
use serde_json::{json, Value};

struct Run {
    _tmp: tempfile::TempDir,
    dir: PathBuf,
}

/// A scratch directory with a config small enough for sub-second commands.
fn setup(extra: Value) -> Run {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("out");
    let mut cfg = json!({
        "seed": 3,
        "output_dir": dir,
        "corpus": { "n_docs": 60, "vocab_size": 300 },
        "pretrain_corpus": { "n_docs": 60, "vocab_size": 300, "id_prefix": "pre" },
        "model": { "layers": 1, "d_model": 16, "heads": 2, "d_ff": 32, "max_len": 24 },
        "pretrain": { "epochs": 1, "batch_size": 16 },
        "finetune": { "epochs": 1, "batch_size": 16 },
        "baseline": { "dim": 8, "epochs": 1 }
    });
    merge(&mut cfg, extra);
    std::fs::create_dir_all(&dir).unwrap();
    std::fs::write(tmp.path().join("config.json"), cfg.to_string()).unwrap();
    Run { dir, _tmp: tmp }
}

fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, t) => *b = t,
    }
}

impl Run {
    fn config(&self) -> PathBuf {
        self.dir.parent().unwrap().join("config.json")
    }

    fn cmd(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_periloom"))
            .arg("--config")
            .arg(self.config())
            .arg("--quiet")
            .args(args)
            .env_remove("PERILOOM_SEED")
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.cmd(args);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn bytes(&self, name: &str) -> Vec<u8> {
        std::fs::read(self.path(name)).unwrap()
    }
}

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_periloom"));
    c.env_remove("PERILOOM_SEED");
    c
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// The error line of a failed run: one line, `error[category]: ...`.
fn error_line(out: &Output) -> String {
    let err = stderr(out);
    let lines: Vec<&str> = err.lines().collect();
    assert_eq!(lines.len(), 1, "expected a single error line, got {err:?}");
    lines[0].to_string()
}

#[test]
fn unknown_command_is_a_usage_error() {
    let out = bin().arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("Usage"));
    let out = bin().args(["evaluate", "--no-such-flag"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(bin().arg("--help").output().unwrap().status.code(), Some(0));
}

#[test]
fn invalid_settings_name_the_field() {
    let run = setup(json!({}));
    let out = run.cmd(&["--set", "eval.k_outer=1", "evaluate"]);
    assert_eq!(out.status.code(), Some(1));
    let line = error_line(&out);
    assert!(line.starts_with("error[config]:") && line.contains("eval.k_outer"), "{line}");

    let out = run.cmd(&["--set", "finetune.learning_rate=-1", "finetune"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(error_line(&out).contains("learning_rate"));

    let out = run.cmd(&["finetune", "--strategy", "sideways"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(error_line(&out).contains("strategy"));
}

#[test]
fn unknown_config_fields_and_missing_files_are_rejected() {
    let run = setup(json!({ "eval": { "k_outter": 3 } }));
    let out = run.cmd(&["evaluate"]);
    assert_eq!(out.status.code(), Some(1));
    let line = error_line(&out);
    assert!(line.starts_with("error[config]:") && line.contains("k_outter"), "{line}");

    let run = setup(json!({ "dataset": "/nonexistent/notes.jsonl" }));
    let out = run.cmd(&["embed", "--baseline", "cbow"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(error_line(&out).contains("dataset"));
}

#[test]
fn malformed_dataset_is_a_data_error() {
    let run = setup(json!({}));
    let bad = run.dir.join("bad.jsonl");
    std::fs::write(&bad, "{\"id\":\"a\",\"text\":\"x\",\"labels\":{}}\nnot json\n").unwrap();
    let out = run.cmd(&["--set", &format!("dataset=\"{}\"", bad.display()), "embed", "--baseline", "cbow"]);
    assert_eq!(out.status.code(), Some(1));
    let line = error_line(&out);
    assert!(line.starts_with("error[data]:"), "{line}");
}

fn explained(out: &Output, path: &str) -> String {
    let text = String::from_utf8_lossy(&out.stdout).into_owned();
    text.lines().find(|l| l.starts_with(&format!("{path} = "))).unwrap_or_else(|| panic!("no `{path}` in {text}")).to_string()
}

#[test]
fn precedence_is_flag_over_file_over_env_over_default() {
    let run = setup(json!({ "eval": { "k_inner": 4 } }));
    let base = |env: Option<&str>, args: &[&str]| {
        let mut c = bin();
        if let Some(s) = env {
            c.env("PERILOOM_SEED", s);
        }
        c.arg("--explain").args(args).arg("evaluate").output().unwrap()
    };
    let out = base(None, &[]);
    assert!(out.status.success());
    assert_eq!(explained(&out, "seed"), "seed = 0  [default]");
    assert_eq!(explained(&out, "eval.k_outer"), "eval.k_outer = 5  [default]");

    let out = base(Some("11"), &[]);
    assert_eq!(explained(&out, "seed"), "seed = 11  [env]");

    let cfg = run.config();
    let cfg = cfg.to_str().unwrap();
    let out = base(Some("11"), &["--config", cfg]);
    assert_eq!(explained(&out, "seed"), "seed = 3  [file]");
    assert_eq!(explained(&out, "eval.k_inner"), "eval.k_inner = 4  [file]");
    assert!(explained(&out, "finetune.seed").ends_with("[derived]"));

    let out = base(Some("11"), &["--config", cfg, "--seed", "5", "--set", "eval.k_inner=2"]);
    assert_eq!(explained(&out, "seed"), "seed = 5  [flag]");
    assert_eq!(explained(&out, "eval.k_inner"), "eval.k_inner = 2  [flag]");

    let out = bin().args(["--explain", "evaluate", "--k-outer", "7"]).output().unwrap();
    assert_eq!(explained(&out, "eval.k_outer"), "eval.k_outer = 7  [flag]");
}

#[test]
fn explain_runs_nothing() {
    let run = setup(json!({}));
    run.ok(&["--explain", "generate-corpus"]);
    assert!(!run.path("corpus.jsonl").exists());
}

#[test]
fn commands_are_idempotent_and_stamp_provenance() {
    let run = setup(json!({}));
    run.ok(&["generate-corpus"]);
    let corpus = run.bytes("corpus.jsonl");
    run.ok(&["pretrain"]);
    let model = run.bytes("pretrained.pltc");
    run.ok(&["embed", "--model", run.path("pretrained.pltc").to_str().unwrap()]);
    let emb = run.bytes("embeddings.pltc");

    run.ok(&["generate-corpus"]);
    run.ok(&["pretrain"]);
    run.ok(&["embed", "--model", run.path("pretrained.pltc").to_str().unwrap()]);
    assert_eq!(run.bytes("corpus.jsonl"), corpus);
    assert_eq!(run.bytes("pretrained.pltc"), model);
    assert_eq!(run.bytes("embeddings.pltc"), emb);

    let f = Features::load(&run.path("embeddings.pltc")).unwrap();
    assert!(f.provenance["config_hash"].as_str().is_some_and(|h| h.len() == 64));
    assert_eq!(f.provenance["tool"], periloom::TOOL_VERSION);
    let model = periloom::finetune::load_model(run.path("pretrained.pltc")).unwrap();
    assert_eq!(model.provenance["config_hash"], f.provenance["config_hash"]);
}

#[test]
fn other_seed_changes_the_corpus() {
    let run = setup(json!({}));
    run.ok(&["generate-corpus"]);
    let a = run.bytes("corpus.jsonl");
    run.ok(&["--seed", "4", "generate-corpus"]);
    assert_ne!(run.bytes("corpus.jsonl"), a);
}

#[test]
fn semi_with_zero_lambda_embeds_like_self_supervised() {
    let run = setup(json!({}));
    let p = |n: &str| run.path(n).to_str().unwrap().to_string();
    run.ok(&["finetune", "--strategy", "self", "--out", &p("self.pltc")]);
    run.ok(&["finetune", "--strategy", "semi", "--lambda", "0", "--task", "dvt", "--out", &p("semi.pltc")]);
    run.ok(&["embed", "--model", &p("self.pltc"), "--out", &p("self_emb.pltc")]);
    run.ok(&["embed", "--model", &p("semi.pltc"), "--out", &p("semi_emb.pltc")]);
    let a = Features::load(&run.path("self_emb.pltc")).unwrap();
    let b = Features::load(&run.path("semi_emb.pltc")).unwrap();
    assert_eq!(a.matrix, b.matrix);
    assert_ne!(a.source, b.source);
}

#[test]
fn mismatched_checkpoints_are_compatibility_errors() {
    let run = setup(json!({}));
    run.ok(&["pretrain"]);
    let base = run.path("pretrained.pltc");
    let out = run.cmd(&["--set", "model.d_model=32", "finetune", "--base", base.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let line = error_line(&out);
    assert!(line.starts_with("error[compatibility]:"), "{line}");

    let out = run.cmd(&["--set", "model.variant=decoder", "finetune", "--base", base.to_str().unwrap()]);
    assert!(error_line(&out).contains("variant"));
}

#[test]
fn features_from_another_dataset_are_rejected() {
    let run = setup(json!({}));
    run.ok(&["embed", "--baseline", "cbow"]);
    run.ok(&["train-predictor", "--task", "dvt"]);
    assert!(run.path("predictor.pltc").exists());
    run.ok(&["--set", "corpus.n_docs=70", "generate-corpus"]);
    let out = run.cmd(&["--set", "corpus.n_docs=70", "train-predictor", "--task", "dvt"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(error_line(&out).starts_with("error[compatibility]:"));
}

#[test]
fn edited_corpus_fails_its_sidecar_hash() {
    let run = setup(json!({}));
    run.ok(&["generate-corpus"]);
    let path = run.path("corpus.jsonl");
    let text = std::fs::read_to_string(&path).unwrap().replacen("\"text\":\"", "\"text\":\"edited ", 1);
    std::fs::write(&path, text).unwrap();
    let out = run.cmd(&["embed", "--baseline", "cbow"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(error_line(&out).starts_with("error[compatibility]:"));
}

#[test]
fn evaluate_and_report_agree() {
    let run = setup(json!({ "eval": { "k_outer": 2, "k_inner": 2, "tasks": ["dvt", "pe"], "strategies": ["pretrained_only"] } }));
    run.ok(&["evaluate"]);
    let folds = std::fs::read_to_string(run.path("folds.csv")).unwrap();
    let report = EvalReport::from_csv(&folds).unwrap();
    let groups = report.groups();
    assert_eq!(groups.len(), 4);
    assert!(groups.iter().all(|(_, rows)| rows.len() == 2));
    let summary = run.bytes("summary.json");
    let chart = run.bytes("chart.svg");
    std::fs::remove_file(run.path("summary.json")).unwrap();
    std::fs::remove_file(run.path("chart.svg")).unwrap();
    run.ok(&["report"]);
    assert_eq!(run.bytes("summary.json"), summary);
    assert_eq!(run.bytes("chart.svg"), chart);
    let s: ReportSummary = serde_json::from_slice(&summary).unwrap();
    for g in &s.groups {
        let a = &g.metrics["auroc"];
        assert!((a.ci_low - (a.mean - 1.96 * a.se)).abs() < 1e-12);
        assert!((a.ci_high - (a.mean + 1.96 * a.se)).abs() < 1e-12);
    }
}

#[test]
fn report_without_an_evaluation_fails_cleanly() {
    let run = setup(json!({}));
    let out = run.cmd(&["report", "--dir", run.dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(error_line(&out).starts_with("error[io]:"));
}

#[test]
fn probe_prints_candidates_for_an_encoder() {
    let run = setup(json!({}));
    run.ok(&["pretrain"]);
    let out = run.ok(&["probe", "--model", run.path("pretrained.pltc").to_str().unwrap(), "--prompt", "patient [MASK] surgery", "--json", "--k", "3"]);
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["prompt"], "patient [MASK] surgery");
    assert!(out.contains("probability"));
}
