use std::path::{Path, PathBuf};
use std::sync::Mutex;

use anyhow::{Context, Result};
use periloom::baselines::{embed_document, train_baseline, BaselineKind};
use periloom::checkpoint::sha256_hex;
use periloom::corpus::{corpus_stats, generate_corpus, CorpusSpec, Dataset, TaskKind};
use periloom::eval::{nested_cv, EvalReport, FeatureSpec, PipelineConfig, ReportSummary, RunMeta, Scorer};
use periloom::finetune::{finetune, load_model, pretrain, save_model, FineTuneConfig, FineTunedModel, Strategy};
use periloom::predict::{predict_proba, train_predictor, FeatureMatrix, PredictorParams};
use periloom::probe::{complete, fill_mask, ProbeResult};
use periloom::text::build_vocab;
use periloom::transformer::Variant;
use periloom::{seed, Error};
use serde_json::{json, Value};

use crate::artifacts::{load_corpus, read_json, save_corpus, sidecar_path, write_json, ArtifactEntry, CorpusMeta, Features, Provenance, RunRecord};
use crate::config::{ModelSettings, RunConfig};
use crate::svg;

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const PRETRAIN_CORPUS_FILE: &str = "pretrain_corpus.jsonl";
pub const PRETRAINED_FILE: &str = "pretrained.pltc";
pub const FINETUNED_FILE: &str = "finetuned.pltc";
pub const BASELINE_FILE: &str = "baseline.pltc";
pub const FEATURES_FILE: &str = "embeddings.pltc";
pub const PREDICTOR_FILE: &str = "predictor.pltc";
pub const FOLDS_FILE: &str = "folds.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CHART_FILE: &str = "chart.svg";
pub const RUN_FILE: &str = "run.json";

/// Resolved configuration plus per-invocation settings.
pub struct Ctx {
    pub cfg: RunConfig,
    pub prov: Provenance,
    pub jobs: usize,
    pub quiet: bool,
}

impl Ctx {
    pub fn new(cfg: RunConfig, jobs: usize, quiet: bool) -> Self {
        let prov = Provenance::new(&cfg.hash());
        Ctx { cfg, prov, jobs: jobs.max(1), quiet }
    }

    fn note(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn dataset_path(&self) -> PathBuf {
        self.cfg.dataset.clone().unwrap_or_else(|| self.cfg.path(CORPUS_FILE))
    }
}

fn corpus_is_current(path: &Path, spec: &CorpusSpec) -> bool {
    path.exists() && read_json::<CorpusMeta>(&sidecar_path(path)).is_ok_and(|m| m.spec.as_ref() == Some(spec))
}

pub fn generate(ctx: &Ctx, out: Option<PathBuf>) -> Result<PathBuf> {
    let path = out.unwrap_or_else(|| ctx.cfg.path(CORPUS_FILE));
    let ds = generate_corpus(&ctx.cfg.corpus)?;
    save_corpus(&path, &ds, Some(&ctx.cfg.corpus), &ctx.prov)?;
    let stats = corpus_stats(&ds)?;
    println!(
        "wrote {} ({} notes, {} word types, {:.1} ± {:.1} tokens per note)",
        path.display(),
        stats.n_docs,
        stats.vocab_size,
        stats.mean_word_len,
        stats.sd_word_len
    );
    for t in &stats.tasks {
        let rate = t.event_rate.map_or("-".into(), |r| format!("{r:.4}"));
        println!("  {:<10} {:>5} positives  event rate {rate}  missing {:.4}", t.task, t.n_positive, t.missing_rate);
    }
    Ok(path)
}

/// The configured dataset; generated into the output directory when absent
/// or produced from a different spec.
pub fn ensure_dataset(ctx: &Ctx) -> Result<Dataset> {
    let path = ctx.dataset_path();
    if ctx.cfg.dataset.is_none() && !corpus_is_current(&path, &ctx.cfg.corpus) {
        ctx.note(format!("generating {}", path.display()));
        let ds = generate_corpus(&ctx.cfg.corpus)?;
        save_corpus(&path, &ds, Some(&ctx.cfg.corpus), &ctx.prov)?;
    }
    Ok(load_corpus(&path)?)
}

fn pretrain_corpus(ctx: &Ctx) -> Result<Dataset> {
    match &ctx.cfg.pretrain_corpus {
        Some(spec) => {
            let path = ctx.cfg.path(PRETRAIN_CORPUS_FILE);
            if !corpus_is_current(&path, spec) {
                let ds = generate_corpus(spec)?;
                save_corpus(&path, &ds, Some(spec), &ctx.prov)?;
            }
            Ok(load_corpus(&path)?)
        }
        None => ensure_dataset(ctx),
    }
}

/// Identity of a pretraining run: architecture, objective settings and corpus.
fn pretrain_key(ctx: &Ctx, corpus_hash: &str) -> String {
    let v = json!({ "model": ctx.cfg.model, "pretrain": ctx.cfg.pretrain, "corpus": corpus_hash });
    sha256_hex(v.to_string().as_bytes())
}

/// Reject a checkpoint whose architecture differs from the configured one.
pub fn check_arch(model: &FineTunedModel, want: &ModelSettings, path: &Path) -> Result<()> {
    let have = &model.params.config;
    let expect = want.arch(have.vocab_size, have.seed);
    if *have != expect {
        let diff = |a: &dyn std::fmt::Debug, b: &dyn std::fmt::Debug| format!("{a:?} vs {b:?}");
        let reason = if have.variant != expect.variant {
            format!("variant {}", diff(&have.variant, &expect.variant))
        } else {
            format!("architecture {}", diff(have, &expect))
        };
        return Err(Error::Incompatible(format!("{} does not match the configured model: {reason}", path.display())).into());
    }
    Ok(())
}

pub fn run_pretrain(ctx: &Ctx, out: Option<PathBuf>) -> Result<FineTunedModel> {
    let path = out.unwrap_or_else(|| ctx.cfg.path(PRETRAINED_FILE));
    let corpus = pretrain_corpus(ctx)?;
    let vocab = build_vocab(&corpus, 1)?;
    let arch = ctx.cfg.model.arch(vocab.len(), seed::derive(ctx.cfg.seed, "init", &[]));
    let pcfg = FineTuneConfig { strategy: Strategy::SelfSupervised, ..ctx.cfg.pretrain.clone() };
    ctx.note(format!(
        "pretraining {:?} (L={}, d={}, |V|={}) on {} notes for {} epochs",
        arch.variant,
        arch.layers,
        arch.d_model,
        vocab.len(),
        corpus.len(),
        pcfg.epochs
    ));
    let (mut model, trace) = pretrain(&arch, &vocab, &corpus, &pcfg)?;
    let key = pretrain_key(ctx, &corpus.content_hash());
    model.provenance = ctx.prov.with(json!({ "pretrain_key": key, "training": model.provenance, "trace": trace }));
    save_model(&model, &path)?;
    println!("wrote {} (self-supervised loss by epoch: {})", path.display(), fmt_losses(&trace.total));
    Ok(model)
}

/// Reuse the pretrained checkpoint when it came from the current settings.
pub fn ensure_pretrained(ctx: &Ctx) -> Result<FineTunedModel> {
    let path = ctx.cfg.path(PRETRAINED_FILE);
    if path.exists() {
        let model = load_model(&path)?;
        let corpus = pretrain_corpus(ctx)?;
        if model.provenance.get("pretrain_key").and_then(Value::as_str) == Some(&pretrain_key(ctx, &corpus.content_hash())) {
            return Ok(model);
        }
        ctx.note(format!("{} is stale for this configuration; pretraining again", path.display()));
    }
    run_pretrain(ctx, None)
}

fn fmt_losses(v: &[f64]) -> String {
    v.iter().map(|l| format!("{l:.4}")).collect::<Vec<_>>().join(", ")
}

/// Fill in the dataset-dependent parts of a fine-tuning config.
fn resolve_finetune(cfg: &FineTuneConfig, strategy: Strategy, task: Option<&str>, ds: &Dataset) -> Result<FineTuneConfig> {
    let mut c = FineTuneConfig { strategy, ..cfg.clone() };
    match strategy {
        Strategy::SemiSupervised => {
            if let Some(t) = task {
                c.task = Some(t.to_string());
            }
            let t = c.task.clone().ok_or_else(|| Error::field("finetune.task", "semi-supervised fine-tuning needs a task"))?;
            ds.task_index(&t)?;
        }
        Strategy::Foundation => {
            if c.tasks.is_empty() {
                c.tasks = ds.tasks.iter().map(|t| t.name.clone()).collect();
            }
            for t in &c.tasks {
                ds.task_index(t)?;
            }
        }
        _ => {}
    }
    Ok(c)
}

pub fn run_finetune(ctx: &Ctx, base: Option<PathBuf>, out: Option<PathBuf>) -> Result<FineTunedModel> {
    let path = out.unwrap_or_else(|| ctx.cfg.path(FINETUNED_FILE));
    let base_model = match &base {
        Some(p) => load_model(p).with_context(|| format!("loading base checkpoint {}", p.display()))?,
        None => ensure_pretrained(ctx)?,
    };
    check_arch(&base_model, &ctx.cfg.model, base.as_deref().unwrap_or(&ctx.cfg.path(PRETRAINED_FILE)))?;
    let ds = ensure_dataset(ctx)?;
    let fcfg = resolve_finetune(&ctx.cfg.finetune, ctx.cfg.finetune.strategy, None, &ds)?;
    ctx.note(format!("fine-tuning ({}) on {} notes", fcfg.strategy.name(), ds.len()));
    let (mut model, trace) = finetune(&base_model, &ds, &fcfg)?;
    model.provenance = ctx.prov.with(json!({ "training": model.provenance, "trace": trace }));
    save_model(&model, &path)?;
    println!("wrote {} ({}; loss by epoch: {})", path.display(), fcfg.strategy.name(), fmt_losses(&trace.total));
    Ok(model)
}

pub fn run_embed(ctx: &Ctx, model: Option<PathBuf>, baseline: Option<BaselineKind>, out: Option<PathBuf>) -> Result<Features> {
    let path = out.unwrap_or_else(|| ctx.cfg.path(FEATURES_FILE));
    let ds = ensure_dataset(ctx)?;
    let (vectors, source) = match baseline {
        Some(kind) => {
            let m = train_baseline(kind, &ds, &ctx.cfg.baseline)?;
            let mut c = m.to_container()?;
            c.provenance = ctx.prov.with(json!({ "baseline": kind, "corpus": ds.content_hash() }));
            let bpath = ctx.cfg.path(BASELINE_FILE);
            c.save(&bpath)?;
            ctx.note(format!("wrote {}", bpath.display()));
            let v = ds.texts().map(|t| embed_document(&m, t)).collect::<periloom::Result<Vec<_>>>()?;
            (v, kind.name().to_string())
        }
        None => {
            let mpath = model.unwrap_or_else(|| ctx.cfg.path(FINETUNED_FILE));
            let bytes = std::fs::read(&mpath).with_context(|| format!("reading model {}", mpath.display()))?;
            let m = FineTunedModel::from_bytes(&bytes)?;
            (m.embed_all(ds.texts())?, format!("model:{}", sha256_hex(&bytes)))
        }
    };
    let ids = ds.notes.iter().map(|n| n.id.clone()).collect();
    let features = Features {
        matrix: FeatureMatrix::new(vectors, ids)?,
        source: source.clone(),
        dataset_hash: ds.content_hash(),
        provenance: ctx.prov.with(json!({ "source": source })),
    };
    features.save(&path)?;
    println!("wrote {} ({} × {} from {})", path.display(), features.matrix.rows, features.matrix.cols, source);
    Ok(features)
}

pub fn run_train_predictor(ctx: &Ctx, features: Option<PathBuf>, task: &str, out: Option<PathBuf>) -> Result<()> {
    let path = out.unwrap_or_else(|| ctx.cfg.path(PREDICTOR_FILE));
    let fpath = features.unwrap_or_else(|| ctx.cfg.path(FEATURES_FILE));
    let f = Features::load(&fpath).with_context(|| format!("loading features {}", fpath.display()))?;
    let ds = ensure_dataset(ctx)?;
    let ids: Vec<&str> = ds.notes.iter().map(|n| n.id.as_str()).collect();
    if f.dataset_hash != ds.content_hash() || f.matrix.ids.iter().map(String::as_str).ne(ids.iter().copied()) {
        return Err(Error::Incompatible(format!("{} was computed from a different dataset", fpath.display())).into());
    }
    let t = ds.task_index(task)?;
    let labels = ds.labels(t);
    let model = train_predictor(&ctx.cfg.predictor, &f.matrix, &labels)?;
    let mut c = model.to_container()?;
    c.provenance = ctx.prov.with(json!({ "task": task, "features": f.source }));
    c.save(&path)?;
    let scores = predict_proba(&model, &f.matrix)?;
    let fit = periloom::eval::binary_metrics(&scores, &labels, ctx.cfg.eval.threshold)?;
    println!(
        "wrote {} ({} on {}; training AUROC {})",
        path.display(),
        ctx.cfg.predictor.name(),
        task,
        fit.auroc.map_or("undefined".into(), |a| format!("{a:.4}"))
    );
    Ok(())
}

pub fn run_probe(ctx: &Ctx, model: Option<PathBuf>, prompt: &str, k: usize, max_new: usize, as_json: bool) -> Result<ProbeResult> {
    let path = model.unwrap_or_else(|| ctx.cfg.path(FINETUNED_FILE));
    let m = load_model(&path).with_context(|| format!("loading model {}", path.display()))?;
    let result = match m.params.config.variant {
        Variant::Encoder => fill_mask(&m, prompt, k)?,
        Variant::Decoder => complete(&m, prompt, max_new)?,
    };
    if as_json {
        println!("{}", serde_json::to_string_pretty(&result)?);
    } else {
        print!("{result}");
    }
    Ok(result)
}

/// One cross-validated comparison cell.
struct Unit {
    task: String,
    strategy: String,
    predictor: String,
    pipeline: PipelineConfig,
}

fn grid_label(grid: &[PredictorParams]) -> String {
    let first = grid[0].name();
    if grid.iter().all(|p| p.name() == first) {
        first.to_string()
    } else {
        "grid".to_string()
    }
}

/// Map `f` over `items` on up to `jobs` threads; results keep input order.
fn par_map<T: Sync, R: Send>(jobs: usize, items: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    if jobs <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    let next = Mutex::new(0usize);
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..jobs.min(items.len()) {
            s.spawn(|| loop {
                let i = {
                    let mut n = next.lock().unwrap();
                    let i = *n;
                    *n += 1;
                    i
                };
                if i >= items.len() {
                    break;
                }
                *slots[i].lock().unwrap() = Some(f(&items[i]));
            });
        }
    });
    slots.into_iter().map(|m| m.into_inner().unwrap().expect("every slot filled")).collect()
}

pub fn run_evaluate(ctx: &Ctx) -> Result<EvalReport> {
    let cfg = &ctx.cfg;
    let ds = ensure_dataset(ctx)?;
    let tasks: Vec<String> = if cfg.eval.tasks.is_empty() {
        ds.tasks.iter().filter(|t| t.kind == TaskKind::BinaryClassification).map(|t| t.name.clone()).collect()
    } else {
        cfg.eval.tasks.clone()
    };
    for t in &tasks {
        ds.task_index(t)?;
    }
    let base = if cfg.eval.strategies.is_empty() { None } else { Some(ensure_pretrained(ctx)?) };
    if let Some(b) = &base {
        check_arch(b, &cfg.model, &cfg.path(PRETRAINED_FILE))?;
    }
    let predictor = grid_label(&cfg.eval.grid);
    let mut units = Vec::new();
    for task in &tasks {
        let pipeline = |features: FeatureSpec, scorer: Scorer| PipelineConfig {
            features: vec![features],
            predictors: cfg.eval.grid.clone(),
            scorer,
            tune: cfg.eval.tune,
            threshold: cfg.eval.threshold,
        };
        for &kind in &cfg.eval.baselines {
            let spec = FeatureSpec::Baseline { kind, hp: cfg.baseline.clone() };
            units.push(Unit {
                task: task.clone(),
                strategy: kind.name().into(),
                predictor: predictor.clone(),
                pipeline: pipeline(spec, Scorer::Predictor),
            });
        }
        for &strategy in &cfg.eval.strategies {
            let finetune = resolve_finetune(&cfg.finetune, strategy, Some(task), &ds)?;
            let spec = FeatureSpec::Transformer { finetune };
            units.push(Unit {
                task: task.clone(),
                strategy: strategy.name().into(),
                predictor: predictor.clone(),
                pipeline: pipeline(spec.clone(), Scorer::Predictor),
            });
            if let Some(scorer) = cfg.scorer_for(strategy) {
                units.push(Unit { task: task.clone(), strategy: strategy.name().into(), predictor: "head".into(), pipeline: pipeline(spec, scorer) });
            }
        }
    }
    ctx.note(format!(
        "evaluating {} cells ({} tasks, {}-fold outer, {}-fold inner) on {} job(s)",
        units.len(),
        tasks.len(),
        cfg.eval.k_outer,
        cfg.eval.k_inner,
        ctx.jobs
    ));
    let results = par_map(ctx.jobs, &units, |u| {
        // Every cell of a task shares its outer folds.
        let cv_seed = seed::derive(cfg.seed, "cv", &[seed::hash_str(&u.task)]);
        let r = nested_cv(&ds, &u.task, base.as_ref(), &u.pipeline, cfg.eval.k_outer, cfg.eval.k_inner, cv_seed);
        if let Ok(r) = &r {
            ctx.note(format!(
                "  {:<10} {:<16} {:<7} AUROC {}",
                u.task,
                u.strategy,
                u.predictor,
                r.mean_auroc().map_or("undefined".into(), |a| format!("{a:.4}"))
            ));
        }
        r
    });
    let mut records = Vec::new();
    for (u, r) in units.iter().zip(results) {
        let r = r.with_context(|| format!("evaluating {} / {} / {}", u.task, u.strategy, u.predictor))?;
        records.extend(r.records(&u.strategy, &u.predictor));
    }
    let report = EvalReport {
        meta: RunMeta {
            seed: cfg.seed,
            k_outer: cfg.eval.k_outer,
            k_inner: cfg.eval.k_inner,
            config_hash: ctx.prov.config_hash.clone(),
            tool: ctx.prov.tool.clone(),
        },
        records,
    };
    let dir = &cfg.output_dir;
    periloom::checkpoint::write_atomic(&dir.join(FOLDS_FILE), report.to_csv()?.as_bytes())?;
    let summary = write_summary(dir, &report)?;
    let mut files = vec![CORPUS_FILE.to_string(), FOLDS_FILE.into(), SUMMARY_FILE.into(), CHART_FILE.into()];
    if cfg.dataset.is_some() {
        files.remove(0);
    }
    if base.is_some() {
        files.push(PRETRAINED_FILE.into());
    }
    let record = RunRecord {
        provenance: ctx.prov.clone(),
        config: serde_json::to_value(cfg)?,
        tasks,
        artifacts: files.iter().map(|f| ArtifactEntry::of(dir, f)).collect::<periloom::Result<_>>()?,
    };
    write_json(&dir.join(RUN_FILE), &record)?;
    print_summary(&summary);
    println!("wrote {}", [FOLDS_FILE, SUMMARY_FILE, CHART_FILE, RUN_FILE].map(|f| dir.join(f).display().to_string()).join(", "));
    Ok(report)
}

fn write_summary(dir: &Path, report: &EvalReport) -> Result<ReportSummary> {
    let summary = report.summary();
    write_json(&dir.join(SUMMARY_FILE), &summary)?;
    periloom::checkpoint::write_atomic(&dir.join(CHART_FILE), svg::chart(&summary, "auroc").as_bytes())?;
    Ok(summary)
}

fn print_summary(s: &ReportSummary) {
    println!("{:<10} {:<16} {:<7} {:>5}  {:>8}  {:>8}  95% CI", "task", "strategy", "pred", "folds", "AUROC", "AUPRC");
    for g in &s.groups {
        let m = |name: &str| g.metrics.get(name);
        let fmt = |name: &str| m(name).map_or("-".into(), |v| format!("{:.4}", v.mean));
        let ci = m("auroc").map_or("-".into(), |v| format!("[{:.4}, {:.4}]", v.ci_low, v.ci_high));
        println!("{:<10} {:<16} {:<7} {:>5}  {:>8}  {:>8}  {ci}", g.task, g.strategy, g.predictor, g.folds, fmt("auroc"), fmt("auprc"));
    }
}

/// Recompute the summary and chart of an evaluate directory from its fold table.
pub fn run_report(dir: &Path) -> Result<ReportSummary> {
    let path = dir.join(FOLDS_FILE);
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let report = EvalReport::from_csv(&text)?;
    if report.records.is_empty() {
        return Err(Error::EmptyDataset).with_context(|| format!("{} has no fold rows", path.display()));
    }
    let summary = write_summary(dir, &report)?;
    print_summary(&summary);
    println!("wrote {}, {}", dir.join(SUMMARY_FILE).display(), dir.join(CHART_FILE).display());
    Ok(summary)
}
