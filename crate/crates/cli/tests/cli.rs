mod support;

use std::fs;

use serde_json::Value;
use support::*;
use vizrec_core::llm::TranscriptEntry;

/// Set `VIZREC_REGENERATE_FIXTURES=1` to rewrite the files instead.
#[test]
fn checked_in_fixtures_are_current() {
    let dir = fixture_dir();
    let regenerate = std::env::var_os("VIZREC_REGENERATE_FIXTURES").is_some();
    for (name, expected) in expected_fixtures() {
        let path = dir.join(name);
        if regenerate {
            fs::create_dir_all(&dir).unwrap();
            fs::write(&path, &expected).unwrap();
        }
        let actual = fs::read_to_string(&path).unwrap_or_default();
        assert!(actual == expected, "{} is stale; rerun with VIZREC_REGENERATE_FIXTURES=1", path.display());
    }
}

fn two_records(dir: &std::path::Path) -> std::path::PathBuf {
    let path = dir.join("two.ndjson");
    let text = render_labeled(&train_corpus()[..2]);
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn features_writes_one_line_per_dataset_and_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = two_records(dir.path());
    let run = || {
        let out = vizrec(&["features", "--corpus", path_str(&corpus)], &[]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        out.stdout
    };
    let first = run();
    let text = String::from_utf8(first.clone()).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    let v: Value = serde_json::from_str(lines[0]).unwrap();
    assert_eq!(v["id"], "train-00");
    assert!(v["features"]["mean_y"].is_number());
    assert_eq!(v["schema_version"], "llm4vis-cat-1");
    assert_eq!(first, run());
}

#[test]
fn corrupt_record_reports_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("bad.ndjson");
    let mut text = render_labeled(&train_corpus()[..2]);
    text.push_str("{\"id\": \"oops\", \"x\": \n");
    fs::write(&corpus, text).unwrap();
    let out = vizrec(&["features", "--corpus", path_str(&corpus)], &[]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert_eq!(stderr.trim().lines().count(), 1, "{stderr}");
    let err = last_json_line(&out.stderr);
    assert_eq!(err["error"], "corpus");
    assert!(err["message"].as_str().unwrap().contains("line 3"), "{err}");
}

#[test]
fn live_backend_without_credential_fails_before_any_work() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store.ndjson");
    let out = vizrec(
        &["--backend", "live", "build-retrieval", "--corpus", "/nonexistent/corpus.ndjson", "--out", path_str(&store)],
        &[],
    );
    assert!(!out.status.success());
    assert_eq!(last_json_line(&out.stderr)["error"], "credential");
    assert!(!store.exists());
}

#[test]
fn credential_flag_does_not_exist() {
    let out = vizrec(&["--api-key", "secret", "features", "--corpus", "x"], &[]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(last_json_line(&out.stderr)["error"], "usage");
}

#[test]
fn mock_backend_needs_a_transcript() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = two_records(dir.path());
    let out = vizrec(&["--backend", "mock", "describe", "--corpus", path_str(&corpus)], &[]);
    assert!(!out.status.success());
    assert!(last_json_line(&out.stderr)["message"].as_str().unwrap().contains("mock-transcript"));
}

#[test]
fn offline_pipeline_matches_script() {
    let dir = tempfile::tempdir().unwrap();
    let run = offline_run(dir.path(), &Backend::Mock { cache: None }, &[]).unwrap();
    let selected = expected_selection();
    assert_eq!(run.build_summary["selected"], selected.entries.len());
    assert_eq!(run.build_summary["accepted"], selected.entries.len() - PRUNED);
    assert_eq!(run.build_summary["warnings"].as_array().unwrap().len(), selected.warnings.len());
    assert_eq!(String::from_utf8(run.metrics).unwrap().trim(), EXPECTED_METRICS);

    let recs: Vec<Value> =
        String::from_utf8(run.recommendations).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(recs.len(), 8);
    for r in &recs {
        assert_eq!(r["demo_ids"].as_array().unwrap().len(), K);
        assert_eq!(r["top2"].as_array().unwrap().len(), 2);
    }
    assert_eq!(recs[0]["id"], "test-0");
    assert_eq!(recs[0]["top2"], serde_json::json!(["line", "scatter"]));
}

fn build_store(dir: &std::path::Path) -> std::path::PathBuf {
    offline_run(dir, &Backend::Mock { cache: None }, &[]).unwrap();
    dir.join("store.ndjson")
}

#[test]
fn zero_shot_flag_drops_demonstrations() {
    let dir = tempfile::tempdir().unwrap();
    let store = build_store(dir.path());
    let fx = fixture_dir();
    let transcript = fx.join("recommend_transcript.ndjson");
    let out = vizrec(
        &[
            "--config",
            path_str(&fx.join("run.json")),
            "--mock-transcript",
            path_str(&transcript),
            "--retrieval.k",
            "0",
            "recommend",
            "--tests",
            path_str(&fx.join("test.ndjson")),
            "--store",
            path_str(&store),
        ],
        &[],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 8);
    for line in text.lines() {
        let r: Value = serde_json::from_str(line).unwrap();
        assert!(r["demo_ids"].as_array().unwrap().is_empty());
    }
    let summary = last_json_line(&out.stderr);
    assert_eq!(summary["provider_calls"], 16);
}

#[test]
fn warm_cache_rerun_makes_no_provider_calls() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache");
    let cold = offline_run(dir.path(), &Backend::Mock { cache: Some(&cache) }, &[]).unwrap();
    assert!(cold.recommend_summary["provider_calls"].as_u64().unwrap() > 0);

    let again = tempfile::tempdir().unwrap();
    let live = Backend::CachedLive { cache: &cache, api_base: "http://127.0.0.1:9" };
    let warm = offline_run(again.path(), &live, &[("LLM4VIS_API_KEY", "test-key")]).unwrap();
    assert_eq!(warm.build_summary["provider_calls"], 0);
    assert_eq!(warm.recommend_summary["provider_calls"], 0);
    assert_eq!(warm.recommendations, cold.recommendations);
    assert_eq!(warm.metrics, cold.metrics);
    assert_eq!(warm.store, cold.store);
}

#[test]
fn evaluate_rejects_mismatched_ids() {
    let dir = tempfile::tempdir().unwrap();
    build_store(dir.path());
    let other = dir.path().join("labels.ndjson");
    fs::write(&other, render_labeled(&train_corpus())).unwrap();
    let recs = dir.path().join("recommendations.ndjson");
    let out = vizrec(&["evaluate", "--recommendations", path_str(&recs), "--labels", path_str(&other)], &[]);
    assert!(!out.status.success());
    assert!(last_json_line(&out.stderr)["error"].is_string());
}

#[test]
fn ablation_over_k_writes_one_row_per_point() {
    let dir = tempfile::tempdir().unwrap();
    let store = build_store(dir.path());
    let fx = fixture_dir();
    // all descriptions first, then one round of answers per grid point
    let script = recommend_transcript();
    let mut entries: Vec<TranscriptEntry> = script.iter().step_by(2).cloned().collect();
    for _ in 1..=3 {
        entries.extend(script.iter().skip(1).step_by(2).cloned());
    }
    let transcript = dir.path().join("ablate.ndjson");
    fs::write(&transcript, render_transcript(&entries)).unwrap();
    let out = vizrec(
        &[
            "--config",
            path_str(&fx.join("run.json")),
            "--mock-transcript",
            path_str(&transcript),
            "ablate",
            "--axis",
            "k",
            "--grid",
            "1,2,3",
            "--store",
            path_str(&store),
            "--tests",
            path_str(&fx.join("test.ndjson")),
        ],
        &[],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows: Vec<Value> = String::from_utf8(out.stdout).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.len(), 3);
    for row in &rows {
        assert_eq!(row["metrics"]["overall"], 75.0);
    }
    assert_eq!(rows[2]["point"], serde_json::json!({ "k": 3 }));
}

#[test]
fn invalid_ablation_grid_fails_without_model_calls() {
    let dir = tempfile::tempdir().unwrap();
    let store = build_store(dir.path());
    let fx = fixture_dir();
    let out = vizrec(
        &[
            "--config",
            path_str(&fx.join("run.json")),
            "--mock-transcript",
            path_str(&fx.join("recommend_transcript.ndjson")),
            "ablate",
            "--axis",
            "retrieval_size",
            "--grid",
            "10,500",
            "--store",
            path_str(&store),
            "--tests",
            path_str(&fx.join("test.ndjson")),
        ],
        &[],
    );
    assert!(!out.status.success());
    assert_eq!(last_json_line(&out.stderr)["error"], "config");
}
