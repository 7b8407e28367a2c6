//! Offline fixtures shared by the CLI tests: a small labeled pool, a test
//! corpus, and scripted transcripts whose outcomes are known in advance.
#![allow(dead_code)]

#[path = "../../../core/tests/common/mod.rs"]
pub mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use vizrec_core::llm::TranscriptEntry;
use vizrec_core::prompt::ScoreVector;
use vizrec_core::retrieval::{build_retrieval_set, RetrievalConfig, RetrievalSet};
use vizrec_core::tabular::{render_corpus, CorpusRecord};
use vizrec_core::{LabeledCorpusRecord, VisualizationType};

pub const BIN: &str = env!("CARGO_BIN_EXE_vizrec");
pub const SEED: u64 = 7;
pub const CLUSTERS: usize = 4;
pub const REPRESENTATIVES: usize = 5;
pub const K: usize = 4;

/// How the scripted model answers one test dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Answer {
    Top1,
    Top2,
    Miss,
}

pub const TEST_ANSWERS: [Answer; 8] =
    [Answer::Top1, Answer::Top2, Answer::Miss, Answer::Top1, Answer::Top1, Answer::Miss, Answer::Top2, Answer::Top1];

/// Hits@2 counted by hand from `TEST_ANSWERS` with labels cycling
/// line, scatter, bar, box: line 2/2, scatter 1/2, bar 1/2, box 2/2.
pub const EXPECTED_METRICS: &str =
    r#"{"line":100.0,"scatter":50.0,"bar":50.0,"box":100.0,"overall":75.0,"n":{"line":2,"scatter":2,"bar":2,"box":2,"total":8}}"#;

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn train_corpus() -> Vec<LabeledCorpusRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    (0..20)
        .map(|i| common::synthetic_record(&format!("train-{i:02}"), VisualizationType::ALL[i % 4], 16 + i % 5, &mut rng))
        .collect()
}

pub fn test_corpus() -> Vec<LabeledCorpusRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(2025);
    (0..8)
        .map(|i| common::synthetic_record(&format!("test-{i}"), VisualizationType::ALL[i % 4], 14, &mut rng))
        .collect()
}

pub fn retrieval_config() -> RetrievalConfig {
    RetrievalConfig { clusters: CLUSTERS, representatives: REPRESENTATIVES, k: K, seed: SEED, ..Default::default() }
}

/// The retrieval set build-retrieval selects from the fixture pool.
pub fn expected_selection() -> RetrievalSet {
    build_retrieval_set(&train_corpus(), &retrieval_config()).expect("fixture pool clusters")
}

fn scores_favoring(top: VisualizationType, second: VisualizationType) -> ScoreVector {
    let mut s = [0.05; 4];
    s[top.index()] = 0.6;
    s[second.index()] = 0.3;
    ScoreVector::new(s)
}

fn answer(explanation: &str, scores: ScoreVector) -> TranscriptEntry {
    TranscriptEntry::Sequence { response: format!("{explanation}\n{}", scores.canonical_json()) }
}

fn description(id: &str) -> TranscriptEntry {
    TranscriptEntry::Sequence {
        response: format!(
            "Single-column perspective: dataset {id} has one column of interest. Cross-column perspective: the columns move together."
        ),
    }
}

fn next(t: VisualizationType) -> VisualizationType {
    VisualizationType::ALL[(t.index() + 1) % 4]
}

/// Number of retrieval entries the script prunes.
pub const PRUNED: usize = 1;

/// Requests of build-retrieval in order: one description and the bootstrap
/// answers per retrieval entry. Entry 0 never reaches the margin, odd
/// entries need a hint and the rest are accepted straight away.
pub fn build_transcript() -> Vec<TranscriptEntry> {
    let set = expected_selection();
    let mut out = Vec::new();
    for (i, e) in set.entries.iter().enumerate() {
        out.push(description(&e.id));
        let right = scores_favoring(e.label, next(e.label));
        let wrong = scores_favoring(next(e.label), e.label);
        if i == 0 {
            // alternating wrong answers keep every hinted prompt distinct
            let other = scores_favoring(next(next(e.label)), e.label);
            for s in [wrong, other, wrong] {
                out.push(answer("The spread suggests another chart.", s));
            }
        } else if i % 2 == 1 {
            out.push(answer("The spread suggests another chart.", wrong));
            out.push(answer(&format!("With the hint, {} fits better.", e.label.display_name()), right));
        } else {
            out.push(answer(&format!("The columns suit a {}.", e.label.display_name()), right));
        }
    }
    out
}

/// Requests of recommend in order: a description and an answer per test
/// dataset, following `TEST_ANSWERS`.
pub fn recommend_transcript() -> Vec<TranscriptEntry> {
    let mut out = Vec::new();
    for (t, plan) in test_corpus().iter().zip(TEST_ANSWERS) {
        out.push(description(&t.dataset.id));
        out.push(recommendation_answer(t, plan));
    }
    out
}

pub fn recommendation_answer(t: &LabeledCorpusRecord, plan: Answer) -> TranscriptEntry {
    let gt = t.label;
    let scores = match plan {
        Answer::Top1 => scores_favoring(gt, next(gt)),
        Answer::Top2 => scores_favoring(next(gt), gt),
        Answer::Miss => scores_favoring(next(gt), next(next(gt))),
    };
    answer(&format!("Scripted answer for {}.", t.dataset.id), scores)
}

pub fn render_transcript(entries: &[TranscriptEntry]) -> String {
    entries.iter().map(|e| serde_json::to_string(e).expect("entry serializes") + "\n").collect()
}

pub fn render_labeled(records: &[LabeledCorpusRecord]) -> String {
    let plain: Vec<CorpusRecord> = records.iter().map(|r| CorpusRecord { dataset: r.dataset.clone(), label: Some(r.label) }).collect();
    render_corpus(&plain)
}

pub fn run_config() -> String {
    let cfg = json!({
        "seed": SEED,
        "backend": "mock",
        "parallelism": 4,
        "retrieval": { "clusters": CLUSTERS, "representatives": REPRESENTATIVES, "k": K },
        "bootstrap": { "max_iters": 3 }
    });
    serde_json::to_string_pretty(&cfg).expect("config serializes") + "\n"
}

/// Expected contents of every checked-in fixture file.
pub fn expected_fixtures() -> Vec<(&'static str, String)> {
    vec![
        ("train.ndjson", render_labeled(&train_corpus())),
        ("test.ndjson", render_labeled(&test_corpus())),
        ("build_transcript.ndjson", render_transcript(&build_transcript())),
        ("recommend_transcript.ndjson", render_transcript(&recommend_transcript())),
        ("run.json", run_config()),
    ]
}

/// Runs the binary without any inherited credential.
pub fn vizrec(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.args(args).env_remove("LLM4VIS_API_KEY").env("RUST_LOG", "error");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

pub fn last_json_line(bytes: &[u8]) -> serde_json::Value {
    let text = String::from_utf8_lossy(bytes);
    let line = text.lines().rev().find(|l| !l.trim().is_empty()).unwrap_or("null");
    serde_json::from_str(line).unwrap_or_else(|e| panic!("not JSON ({e}): {line}"))
}

/// Outputs of one offline build-retrieval, recommend, evaluate run.
pub struct OfflineRun {
    pub store: Vec<u8>,
    pub recommendations: Vec<u8>,
    pub metrics: Vec<u8>,
    pub build_summary: serde_json::Value,
    pub recommend_summary: serde_json::Value,
}

/// Backend for `offline_run`.
pub enum Backend<'a> {
    /// The scripted transcripts, optionally recording into a cache.
    Mock { cache: Option<&'a Path> },
    CachedLive { cache: &'a Path, api_base: &'a str },
}

impl Backend<'_> {
    fn flags(&self, transcript: &str) -> Vec<String> {
        let mut v: Vec<String> = Vec::new();
        match self {
            Backend::Mock { cache } => {
                v.extend(["--backend".into(), "mock".into(), "--mock-transcript".into()]);
                v.push(path_str(&fixture_dir().join(transcript)).into());
                if let Some(c) = cache {
                    v.extend(["--cache-dir".into(), path_str(c).into()]);
                }
            }
            Backend::CachedLive { cache, api_base } => {
                v.extend(["--backend".into(), "cached-live".into(), "--cache-dir".into(), path_str(cache).into()]);
                v.extend(["--api-base".into(), api_base.to_string()]);
            }
        }
        v
    }
}

/// Runs build-retrieval, recommend and evaluate in `dir`.
pub fn offline_run(dir: &Path, backend: &Backend, envs: &[(&str, &str)]) -> Result<OfflineRun, String> {
    let fx = fixture_dir();
    let cfg = fx.join("run.json");
    let store = dir.join("store.ndjson");
    let recs = dir.join("recommendations.ndjson");
    let metrics = dir.join("metrics.json");
    let with = |transcript: &str, extra: &[&str]| -> Vec<String> {
        let mut v: Vec<String> = vec!["--config".into(), path_str(&cfg).into()];
        v.extend(backend.flags(transcript));
        v.extend(extra.iter().map(|s| s.to_string()));
        v
    };
    let run = |args: Vec<String>| -> Result<Output, String> {
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        let out = vizrec(&refs, envs);
        if out.status.success() {
            Ok(out)
        } else {
            Err(format!("vizrec {} failed: {}", refs.join(" "), String::from_utf8_lossy(&out.stderr)))
        }
    };
    let build = run(with("build_transcript.ndjson", &["build-retrieval", "--corpus", path_str(&fx.join("train.ndjson")), "--out", path_str(&store)]))?;
    let recommend = run(with("recommend_transcript.ndjson", &[
        "recommend",
        "--tests",
        path_str(&fx.join("test.ndjson")),
        "--store",
        path_str(&store),
        "--out",
        path_str(&recs),
    ]))?;
    let mut evaluate = vec!["--config".to_string(), path_str(&cfg).to_string()];
    evaluate.extend([
        "evaluate",
        "--recommendations",
        path_str(&recs),
        "--labels",
        path_str(&fx.join("test.ndjson")),
        "--out",
        path_str(&metrics),
    ].map(String::from));
    run(evaluate)?;
    let read = |p: &Path| std::fs::read(p).map_err(|e| format!("reading {}: {e}", p.display()));
    Ok(OfflineRun {
        store: read(&store)?,
        recommendations: read(&recs)?,
        metrics: read(&metrics)?,
        build_summary: last_json_line(&build.stdout),
        recommend_summary: last_json_line(&recommend.stdout),
    })
}
