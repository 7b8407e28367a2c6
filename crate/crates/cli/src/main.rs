mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use log::warn;
use serde::Serialize;
use serde_json::{json, Value};
use vizrec_core::features::extract_features;
use vizrec_core::llm::{Gateway, GatewayError};
use vizrec_core::pipeline::{
    bootstrap_retrieval_set, evaluate_hits_at_2, explanation_consistency, labels_for, prune_retrieval_set, recommend_all,
    run_ablation, run_bounded, AblationAxis, AblationPoint, LlmContext, Recommendation,
};
use vizrec_core::retrieval::{build_retrieval_set, DemoOrdering, RetrievalSet};
use vizrec_core::tabular::{load_corpus, load_labeled_corpus};

use crate::config::{Backend, RunConfig};

#[derive(Parser)]
#[command(name = "vizrec", version, about = "Chart type recommendation for two-column tables")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// JSON run configuration; flags override its fields
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    #[arg(long, global = true, value_enum)]
    backend: Option<Backend>,

    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,

    #[arg(long, global = true)]
    templates_dir: Option<PathBuf>,

    #[arg(long, global = true)]
    model: Option<String>,

    #[arg(long, global = true)]
    api_base: Option<String>,

    #[arg(long, global = true)]
    parallelism: Option<usize>,

    /// NDJSON transcript for the mock backend
    #[arg(long, global = true)]
    mock_transcript: Option<PathBuf>,

    #[arg(long = "retrieval.clusters", global = true, value_name = "C")]
    retrieval_clusters: Option<usize>,

    #[arg(long = "retrieval.representatives", global = true, value_name = "R")]
    retrieval_representatives: Option<usize>,

    /// Demonstrations per prompt; 0 gives zero-shot prompts
    #[arg(long = "retrieval.k", global = true, value_name = "K")]
    retrieval_k: Option<usize>,

    #[arg(long = "retrieval.seed", global = true, value_name = "SEED")]
    retrieval_seed: Option<u64>,

    /// nearest_first, furthest_first or random
    #[arg(long = "retrieval.ordering", global = true, value_name = "ORDER")]
    retrieval_ordering: Option<String>,

    #[arg(long = "bootstrap.margin", global = true, value_name = "M")]
    bootstrap_margin: Option<f64>,

    #[arg(long = "bootstrap.max_iters", global = true, value_name = "N")]
    bootstrap_max_iters: Option<usize>,

    #[arg(long = "bootstrap.sum_tolerance", global = true, value_name = "TOL")]
    bootstrap_sum_tolerance: Option<f64>,

    #[arg(long = "llm.temperature", global = true, value_name = "T")]
    llm_temperature: Option<f64>,

    #[arg(long = "llm.max_tokens", global = true, value_name = "N")]
    llm_max_tokens: Option<u32>,

    #[arg(long = "llm.max_prompt_chars", global = true, value_name = "N")]
    llm_max_prompt_chars: Option<usize>,
}

impl GlobalArgs {
    fn overrides(&self) -> Result<Vec<(String, Value)>> {
        let mut out = Vec::new();
        let mut put = |key: &str, v: Option<Value>| {
            if let Some(v) = v {
                out.push((key.to_string(), v));
            }
        };
        put("seed", self.seed.map(Value::from));
        put("backend", self.backend.map(|b| serde_json::to_value(b).expect("backend serializes")));
        put("cache_dir", self.cache_dir.as_ref().map(|p| json!(p)));
        put("templates_dir", self.templates_dir.as_ref().map(|p| json!(p)));
        put("llm.model_id", self.model.clone().map(Value::from));
        put("api_base", self.api_base.clone().map(Value::from));
        put("parallelism", self.parallelism.map(Value::from));
        put("mock_transcript", self.mock_transcript.as_ref().map(|p| json!(p)));
        put("retrieval.clusters", self.retrieval_clusters.map(Value::from));
        put("retrieval.representatives", self.retrieval_representatives.map(Value::from));
        put("retrieval.k", self.retrieval_k.map(Value::from));
        put("retrieval.seed", self.retrieval_seed.map(Value::from));
        let ordering = match &self.retrieval_ordering {
            Some(s) => Some(DemoOrdering::from_name(s).with_context(|| format!("unknown ordering {s:?}"))?),
            None => None,
        };
        put("retrieval.ordering", ordering.map(|o| Value::from(o.name())));
        put("bootstrap.margin", self.bootstrap_margin.map(Value::from));
        put("bootstrap.max_iters", self.bootstrap_max_iters.map(Value::from));
        put("bootstrap.sum_tolerance", self.bootstrap_sum_tolerance.map(Value::from));
        put("llm.temperature", self.llm_temperature.map(Value::from));
        put("llm.max_tokens", self.llm_max_tokens.map(Value::from));
        put("llm.max_prompt_chars", self.llm_max_prompt_chars.map(Value::from));
        Ok(out)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write the feature map of every dataset as NDJSON
    Features {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Ask the model for a feature description of every dataset
    Describe {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cluster a labeled pool, bootstrap demonstrations and write the store
    BuildRetrieval {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recommend chart types for every test dataset
    Recommend {
        #[arg(long)]
        tests: PathBuf,
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Hits@2 of recommendations against labels
    Evaluate {
        #[arg(long)]
        recommendations: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also re-score each explanation and report the Pearson correlation
        #[arg(long)]
        consistency: bool,
    },
    /// Hits@2 over a grid of K, retrieval size or demonstration ordering
    Ablate {
        /// k, retrieval_size or ordering
        #[arg(long)]
        axis: String,
        /// Comma separated grid values
        #[arg(long, value_delimiter = ',', required = true)]
        grid: Vec<String>,
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        tests: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

impl Command {
    fn needs_model(&self) -> bool {
        match self {
            Command::Features { .. } => false,
            Command::Evaluate { consistency, .. } => *consistency,
            _ => true,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => e.exit(),
        Err(e) => {
            let rendered = e.to_string();
            let message = rendered.lines().find(|l| !l.trim().is_empty()).unwrap_or("invalid arguments");
            report("usage", message.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report(error_kind(&e), &format!("{e:#}"));
            ExitCode::FAILURE
        }
    }
}

fn report(kind: &str, message: &str) {
    eprintln!("{}", json!({ "error": kind, "message": message }));
}

fn error_kind(e: &anyhow::Error) -> &'static str {
    for cause in e.chain() {
        let gateway = match cause.downcast_ref::<vizrec_core::Error>() {
            Some(vizrec_core::Error::Gateway(g)) => Some(g),
            Some(other) => return other.kind(),
            None => cause.downcast_ref::<GatewayError>(),
        };
        if let Some(g) = gateway {
            return match g {
                GatewayError::MissingCredential => "credential",
                _ => "gateway",
            };
        }
    }
    "cli"
}

fn run(cli: Cli) -> Result<()> {
    let cfg = RunConfig::load(cli.global.config.as_deref(), &cli.global.overrides()?)?;
    let model = if cli.command.needs_model() { Some((cfg.gateway()?, cfg.templates()?)) } else { None };
    let ctx = model.as_ref().map(|(gateway, templates)| LlmContext { gateway, templates, settings: &cfg.llm });

    match &cli.command {
        Command::Features { corpus, out } => {
            let records = load_corpus(corpus, false).with_context(|| format!("loading {}", corpus.display()))?;
            let lines = records
                .iter()
                .map(|r| {
                    let mut line = json!({ "id": r.dataset.id });
                    let map: serde_json::Map<String, Value> = serde_json::from_str(&extract_features(&r.dataset).to_json())?;
                    line.as_object_mut().expect("object").extend(map);
                    Ok(line.to_string())
                })
                .collect::<Result<Vec<_>>>()?;
            write_lines(out.as_deref(), &lines)
        }
        Command::Describe { corpus, out } => {
            let ctx = ctx.expect("model context");
            let records = load_corpus(corpus, false).with_context(|| format!("loading {}", corpus.display()))?;
            let threads = ctx.gateway.effective_parallelism(cfg.parallelism);
            let descriptions = run_bounded(&records, threads, |r| ctx.describe(&extract_features(&r.dataset)))?;
            let lines: Vec<String> = records
                .iter()
                .zip(&descriptions)
                .map(|(r, d)| json!({ "id": r.dataset.id, "description": d }).to_string())
                .collect();
            write_lines(out.as_deref(), &lines)?;
            summary(out.is_some(), "describe", json!({ "records": lines.len() }), ctx.gateway)
        }
        Command::BuildRetrieval { corpus, out } => {
            let ctx = ctx.expect("model context");
            let pool = load_labeled_corpus(corpus).with_context(|| format!("loading {}", corpus.display()))?;
            let mut set = build_retrieval_set(&pool, &cfg.retrieval)?;
            bootstrap_retrieval_set(&mut set, ctx, &cfg.bootstrap, cfg.parallelism)?;
            let pruned = prune_retrieval_set(&set)?;
            for w in &pruned.warnings {
                warn!("{w}");
            }
            pruned.write(out)?;
            let fields = json!({
                "selected": set.entries.len(),
                "accepted": pruned.entries.len(),
                "pruned": set.entries.len() - pruned.entries.len(),
                "warnings": pruned.warnings,
            });
            summary(true, "build-retrieval", fields, ctx.gateway)
        }
        Command::Recommend { tests, store, out } => {
            let ctx = ctx.expect("model context");
            let datasets: Vec<_> = load_corpus(tests, false)
                .with_context(|| format!("loading {}", tests.display()))?
                .into_iter()
                .map(|r| r.dataset)
                .collect();
            let set = RetrievalSet::load(store)?;
            let recs = recommend_all(&datasets, &set, &cfg.retrieval, ctx, &cfg.bootstrap, cfg.parallelism)?;
            write_lines(out.as_deref(), &to_lines(&recs)?)?;
            summary(out.is_some(), "recommend", json!({ "records": recs.len() }), ctx.gateway)
        }
        Command::Evaluate { recommendations, labels, out, consistency } => {
            let recs = read_recommendations(recommendations)?;
            let corpus = load_labeled_corpus(labels).with_context(|| format!("loading {}", labels.display()))?;
            let metrics = evaluate_hits_at_2(&recs, &labels_for(&recs, &corpus)?)?;
            write_lines(out.as_deref(), &[serde_json::to_string(&metrics)?])?;
            if *consistency {
                let ctx = ctx.expect("model context");
                let report = explanation_consistency(&recs, ctx, cfg.bootstrap.sum_tolerance)?;
                summary(out.is_some(), "evaluate", json!({ "consistency": report }), ctx.gateway)?;
            }
            Ok(())
        }
        Command::Ablate { axis, grid, store, tests, out } => {
            let ctx = ctx.expect("model context");
            let axis = AblationAxis::from_name(axis).with_context(|| format!("unknown ablation axis {axis:?}"))?;
            let points = grid.iter().map(|v| AblationPoint::parse(axis, v)).collect::<Result<Vec<_>, _>>()?;
            let set = RetrievalSet::load(store)?;
            let tests = load_labeled_corpus(tests).with_context(|| format!("loading {}", tests.display()))?;
            let rows = run_ablation(&points, &set, &tests, &cfg.retrieval, ctx, &cfg.bootstrap, cfg.parallelism)?;
            write_lines(out.as_deref(), &to_lines(&rows)?)?;
            summary(out.is_some(), "ablate", json!({ "rows": rows.len() }), ctx.gateway)
        }
    }
}

fn to_lines<T: Serialize>(items: &[T]) -> Result<Vec<String>> {
    items.iter().map(|i| Ok(serde_json::to_string(i)?)).collect()
}

/// Writes NDJSON to `out`, or to stdout when no path is given.
fn write_lines(out: Option<&Path>, lines: &[String]) -> Result<()> {
    let mut text = lines.join("\n");
    text.push('\n');
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Run summary with the gateway counters. Goes to stdout unless stdout
/// already carries the command's output.
fn summary(to_stdout: bool, command: &str, fields: Value, gateway: &Gateway) -> Result<()> {
    let mut obj = json!({ "command": command });
    obj.as_object_mut().expect("object").extend(fields.as_object().cloned().unwrap_or_default());
    obj["provider_calls"] = gateway.provider_calls().into();
    obj["cache_hits"] = gateway.cache_hits().into();
    if to_stdout {
        println!("{obj}");
    } else {
        eprintln!("{obj}");
    }
    Ok(())
}

fn read_recommendations(path: &Path) -> Result<Vec<Recommendation>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{} line {}", path.display(), i + 1)))
        .collect()
}
