use std::ffi::OsString;
use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use periloom::baselines::BaselineKind;
use periloom::predict::PredictorParams;
use serde_json::Value;

use crate::commands::{self, Ctx};
use crate::config::Resolved;

/// Clinical-note risk prediction: corpora, embeddings, fine-tuning and evaluation.
#[derive(Debug, Parser)]
#[command(name = "periloom", version, propagate_version = true)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// JSON run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Master seed (overrides the file and PERILOOM_SEED).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory for artifacts.
    #[arg(long, global = true, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
    /// Override any config field by dotted path, e.g. `--set eval.k_outer=3`.
    /// The value is parsed as JSON, falling back to a plain string.
    #[arg(long = "set", global = true, value_name = "PATH=VALUE")]
    pub set: Vec<String>,
    /// Print every resolved setting with its source and exit.
    #[arg(long, global = true)]
    pub explain: bool,
    /// Worker threads for `evaluate`.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    /// Suppress progress messages on stderr.
    #[arg(long, short, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic corpus (dataset JSONL plus metadata sidecar).
    GenerateCorpus {
        #[arg(long)]
        n_docs: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pretrain a transformer on the pretraining corpus.
    Pretrain {
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fine-tune a pretrained checkpoint on the dataset.
    Finetune {
        /// pretrained, self, semi or foundation.
        #[arg(long)]
        strategy: Option<String>,
        #[arg(long)]
        lambda: Option<f64>,
        /// Task for semi-supervised fine-tuning.
        #[arg(long)]
        task: Option<String>,
        /// Comma-separated tasks for foundation fine-tuning.
        #[arg(long, value_delimiter = ',')]
        tasks: Option<Vec<String>>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Base checkpoint; defaults to the pretrained checkpoint of the output directory.
        #[arg(long)]
        base: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write document embeddings of the dataset from a model or a baseline.
    Embed {
        #[arg(long, conflicts_with = "baseline")]
        model: Option<PathBuf>,
        /// cbow, glove, fasttext or doc2vec.
        #[arg(long)]
        baseline: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a predictor on stored embeddings for one task.
    TrainPredictor {
        #[arg(long)]
        task: String,
        /// gbt, logreg or rf with default settings.
        #[arg(long)]
        predictor: Option<String>,
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Nested cross-validated comparison of baselines and fine-tuning strategies.
    Evaluate {
        #[arg(long)]
        k_outer: Option<usize>,
        #[arg(long)]
        k_inner: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        tasks: Option<Vec<String>>,
        /// Comma-separated strategies (pretrained, self, semi, foundation).
        #[arg(long, value_delimiter = ',')]
        strategies: Option<Vec<String>>,
        /// predictor_only or full_pipeline.
        #[arg(long)]
        tune: Option<String>,
        /// Also score semi-supervised and foundation models through their heads.
        #[arg(long)]
        heads: bool,
    },
    /// Fill-mask (encoder) or greedy completion (decoder) probe.
    Probe {
        #[arg(long)]
        prompt: String,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, default_value_t = 16)]
        max_new_tokens: usize,
        #[arg(long)]
        json: bool,
    },
    /// Rebuild the summary and chart of an evaluate directory from its fold table.
    Report {
        /// Defaults to the output directory.
        #[arg(long)]
        dir: Option<PathBuf>,
    },
}

fn strategy_name(s: &str) -> Result<&'static str> {
    Ok(match s.to_ascii_lowercase().replace('-', "_").as_str() {
        "pretrained" | "pretrained_only" | "none" => "pretrained_only",
        "self" | "self_supervised" => "self_supervised",
        "semi" | "semi_supervised" => "semi_supervised",
        "foundation" | "multitask" => "foundation",
        _ => {
            return Err(periloom::Error::field(
                "strategy",
                format!("unknown strategy `{s}` (expected pretrained, self, semi or foundation)"),
            )
            .into())
        }
    })
}

fn parse_set(s: &str) -> Result<(String, Value)> {
    let (path, raw) = s
        .split_once('=')
        .ok_or_else(|| periloom::Error::field("--set", format!("`{s}` is not PATH=VALUE")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((path.trim().to_string(), value))
}

/// Flag overrides as (dotted path, value), lowest precedence first.
fn overrides(cli: &Cli) -> Result<Vec<(String, Value)>> {
    let mut out: Vec<(String, Value)> = Vec::new();
    let mut put = |path: &str, v: Value| out.push((path.to_string(), v));
    let g = &cli.global;
    if let Some(s) = g.seed {
        put("seed", s.into());
    }
    if let Some(d) = &g.out_dir {
        put("output_dir", d.display().to_string().into());
    }
    match &cli.command {
        Command::GenerateCorpus { n_docs: Some(n), .. } => put("corpus.n_docs", (*n).into()),
        Command::Pretrain { epochs: Some(e), .. } => put("pretrain.epochs", (*e).into()),
        Command::Finetune { strategy, lambda, task, tasks, epochs, .. } => {
            if let Some(s) = strategy {
                put("finetune.strategy", strategy_name(s)?.into());
            }
            if let Some(l) = lambda {
                put("finetune.lambda", (*l).into());
            }
            if let Some(t) = task {
                put("finetune.task", t.clone().into());
            }
            if let Some(t) = tasks {
                put("finetune.tasks", t.clone().into());
            }
            if let Some(e) = epochs {
                put("finetune.epochs", (*e).into());
            }
        }
        Command::TrainPredictor { predictor: Some(p), .. } => {
            put("predictor", serde_json::to_value(PredictorParams::default_for(p)?)?);
        }
        Command::Evaluate { k_outer, k_inner, tasks, strategies, tune, heads } => {
            if let Some(k) = k_outer {
                put("eval.k_outer", (*k).into());
            }
            if let Some(k) = k_inner {
                put("eval.k_inner", (*k).into());
            }
            if let Some(t) = tasks {
                put("eval.tasks", t.clone().into());
            }
            if let Some(s) = strategies {
                let names = s.iter().map(|s| strategy_name(s)).collect::<Result<Vec<_>>>()?;
                put("eval.strategies", names.into());
            }
            if let Some(t) = tune {
                put("eval.tune", t.clone().into());
            }
            if *heads {
                put("eval.heads", true.into());
            }
        }
        _ => {}
    }
    for s in &g.set {
        let (p, v) = parse_set(s)?;
        put(&p, v);
    }
    Ok(out)
}

fn baseline_kind(s: &str) -> Result<BaselineKind> {
    serde_json::from_value(Value::String(s.to_ascii_lowercase())).map_err(|_| {
        periloom::Error::field("baseline", format!("unknown baseline `{s}` (expected cbow, glove, fasttext or doc2vec)")).into()
    })
}

/// Execute a parsed command line.
pub fn dispatch(cli: Cli) -> Result<()> {
    let resolved = Resolved::load(cli.global.config.as_deref(), overrides(&cli)?)?;
    if cli.global.explain {
        print!("{}", resolved.explain());
        return Ok(());
    }
    let ctx = Ctx::new(resolved.config, cli.global.jobs, cli.global.quiet);
    match cli.command {
        Command::GenerateCorpus { out, .. } => commands::generate(&ctx, out).map(drop),
        Command::Pretrain { out, .. } => commands::run_pretrain(&ctx, out).map(drop),
        Command::Finetune { base, out, .. } => commands::run_finetune(&ctx, base, out).map(drop),
        Command::Embed { model, baseline, out } => {
            let kind = baseline.as_deref().map(baseline_kind).transpose()?;
            commands::run_embed(&ctx, model, kind, out).map(drop)
        }
        Command::TrainPredictor { task, features, out, .. } => commands::run_train_predictor(&ctx, features, &task, out),
        Command::Evaluate { .. } => commands::run_evaluate(&ctx).map(drop),
        Command::Probe { prompt, model, k, max_new_tokens, json } => {
            commands::run_probe(&ctx, model, &prompt, k, max_new_tokens, json).map(drop)
        }
        Command::Report { dir } => commands::run_report(&dir.unwrap_or_else(|| ctx.cfg.output_dir.clone())).map(drop),
    }
}

/// Category of an error for the `error[...]` line.
pub fn category(e: &anyhow::Error) -> &'static str {
    for cause in e.chain() {
        if let Some(p) = cause.downcast_ref::<periloom::Error>() {
            return p.category();
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return "io";
        }
    }
    "config"
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Run with the given arguments and return the process exit code:
/// 0 ok, 1 config or data error, 2 usage error, 3 internal failure.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    std::panic::set_hook(Box::new(|info| {
        let msg = info
            .payload()
            .downcast_ref::<&str>()
            .map(|s| s.to_string())
            .or_else(|| info.payload().downcast_ref::<String>().cloned())
            .unwrap_or_default();
        let at = info.location().map(|l| format!(" at {}:{}", l.file(), l.line())).unwrap_or_default();
        eprintln!("error[internal]: {}{at}", one_line(&msg));
    }));
    match std::panic::catch_unwind(|| dispatch(cli)) {
        Ok(Ok(())) => 0,
        Ok(Err(e)) => {
            eprintln!("error[{}]: {}", category(&e), one_line(&format!("{e:#}")));
            1
        }
        Err(_) => 3,
    }
}
