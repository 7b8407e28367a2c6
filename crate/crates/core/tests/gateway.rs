use std::collections::HashSet;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Barrier};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vizrec_core::llm::{
    cache_key, ChatMessage, ChatProvider, ChatRequest, ChatResponse, FinishReason, Gateway, GatewayError, LlmSettings,
    MockProvider, ProviderError, ResponseCache, RetryPolicy, Role, TranscriptEntry,
};

fn req(text: &str) -> ChatRequest {
    LlmSettings::default().request(text)
}

struct Counting {
    calls: Arc<AtomicUsize>,
}

impl ChatProvider for Counting {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(ChatResponse::new(format!("answer {n} to {}", req.messages[0].content.len()), FinishReason::Stop, "test"))
    }

    fn is_live(&self) -> bool {
        true
    }
}

#[test]
fn warm_cache_issues_no_provider_calls() {
    let dir = tempfile::tempdir().unwrap();
    let calls = Arc::new(AtomicUsize::new(0));
    let prompts = ["one", "two", "three"];

    let cold = Gateway::new(Box::new(Counting { calls: calls.clone() }), Some(ResponseCache::open(dir.path()).unwrap()));
    let first: Vec<String> = prompts.iter().map(|p| cold.complete(&req(p)).unwrap().text).collect();
    assert_eq!(cold.provider_calls(), 3);
    assert!(!cold.can_resample());

    let warm = Gateway::new(Box::new(Counting { calls: calls.clone() }), Some(ResponseCache::open(dir.path()).unwrap()));
    let second: Vec<String> = prompts.iter().map(|p| warm.complete(&req(p)).unwrap().text).collect();
    assert_eq!(warm.provider_calls(), 0);
    assert_eq!(warm.cache_hits(), 3);
    assert_eq!(first, second);
    assert_eq!(calls.load(Ordering::SeqCst), 3);
}

#[test]
fn cache_entries_are_write_once_under_concurrency() {
    let dir = tempfile::tempdir().unwrap();
    let cache = ResponseCache::open(dir.path()).unwrap();
    let r = req("shared");
    let key = cache_key(&r);
    let barrier = Arc::new(Barrier::new(8));
    let results: Vec<String> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..8)
            .map(|i| {
                let (cache, r, key, barrier) = (cache.clone(), r.clone(), key.clone(), barrier.clone());
                s.spawn(move || {
                    barrier.wait();
                    cache.put(&key, &r, &ChatResponse::new(format!("writer {i}"), FinishReason::Stop, "t")).unwrap().text
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let stored = cache.get(&key, &r).unwrap().unwrap().text;
    assert!(results.iter().all(|t| *t == stored), "{results:?} vs {stored}");

    let again = cache.put(&key, &r, &ChatResponse::new("late", FinishReason::Stop, "t")).unwrap();
    assert_eq!(again.text, stored);
    let files = std::fs::read_dir(dir.path()).unwrap().count();
    assert_eq!(files, 1);
}

#[test]
fn cache_rejects_mismatched_request() {
    let dir = tempfile::tempdir().unwrap();
    let cache = ResponseCache::open(dir.path()).unwrap();
    let a = req("a");
    cache.put(&cache_key(&a), &a, &ChatResponse::new("x", FinishReason::Stop, "t")).unwrap();
    assert!(matches!(cache.get(&cache_key(&a), &req("b")), Err(GatewayError::Cache { .. })));
}

#[test]
fn no_key_collisions_over_a_million_requests() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut seen_canonical = HashSet::with_capacity(1_000_000);
    let mut seen_keys = HashSet::with_capacity(1_000_000);
    for i in 0..1_000_000u32 {
        let r = ChatRequest {
            max_tokens: rng.random_range(1..4096),
            messages: vec![ChatMessage { content: format!("{i}:{}", rng.random::<u64>()), role: Role::User }],
            model_id: "m".into(),
            temperature: (rng.random_range(0..20) as f64) / 10.0,
        };
        if seen_canonical.insert(r.canonical_json()) {
            assert!(seen_keys.insert(cache_key(&r).0));
        }
    }
    assert_eq!(seen_keys.len(), seen_canonical.len());
}

#[test]
fn retryable_failures_stop_after_budget() {
    let calls = Arc::new(AtomicUsize::new(0));
    let c = calls.clone();
    let gw = Gateway::from_fn(move |_| {
        c.fetch_add(1, Ordering::SeqCst);
        Err(ProviderError::Retryable("429".into()))
    })
    .with_retry(RetryPolicy { max_retries: 2, base_delay: Duration::ZERO });
    match gw.complete(&req("x")) {
        Err(GatewayError::Provider { attempts, .. }) => assert_eq!(attempts, 3),
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(calls.load(Ordering::SeqCst), 3);
    assert_eq!(gw.provider_calls(), 3);
}

#[test]
fn fatal_errors_are_not_retried() {
    let gw = Gateway::from_fn(|_| Err(ProviderError::Fatal(GatewayError::InvalidRequest("bad".into()))))
        .with_retry(RetryPolicy { max_retries: 2, base_delay: Duration::ZERO });
    assert!(gw.complete(&req("x")).is_err());
    assert_eq!(gw.provider_calls(), 1);
}

#[test]
fn transient_failure_then_success() {
    let calls = Arc::new(AtomicUsize::new(0));
    let c = calls.clone();
    let gw = Gateway::from_fn(move |_| {
        if c.fetch_add(1, Ordering::SeqCst) == 0 {
            Err(ProviderError::Retryable("timeout".into()))
        } else {
            Ok(ChatResponse::new("fine", FinishReason::Stop, "t"))
        }
    })
    .with_retry(RetryPolicy { max_retries: 2, base_delay: Duration::ZERO });
    assert_eq!(gw.complete(&req("x")).unwrap().text, "fine");
    assert_eq!(gw.provider_calls(), 2);
}

#[test]
fn mock_prefers_digest_then_sequence() {
    let hello = req("hello");
    let gw = Gateway::mock([
        TranscriptEntry::Sequence { response: "first".into() },
        TranscriptEntry::Digest { digest: cache_key(&hello).0, response: "hi there".into() },
        TranscriptEntry::Sequence { response: "second".into() },
    ]);
    assert_eq!(gw.complete(&hello).unwrap().text, "hi there");
    assert_eq!(gw.complete(&hello).unwrap().text, "hi there");
    assert_eq!(gw.complete(&req("a")).unwrap().text, "first");
    assert_eq!(gw.complete(&req("b")).unwrap().text, "second");
    assert!(matches!(gw.complete(&req("c")), Err(GatewayError::MockExhausted { .. })));
    assert_eq!(gw.effective_parallelism(8), 1);
}

#[test]
fn digest_only_mock_reports_unmatched_and_allows_parallelism() {
    let gw = Gateway::mock([TranscriptEntry::Digest { digest: "00".into(), response: "x".into() }]);
    assert!(matches!(gw.complete(&req("q")), Err(GatewayError::MockUnmatched { .. })));
    assert_eq!(gw.effective_parallelism(8), 8);
}

#[test]
fn transcript_lines_parse() {
    let text = "{\"match\":\"sequence\",\"response\":\"a\"}\n\n{\"match\":\"digest\",\"digest\":\"ab\",\"response\":\"b\"}\n";
    let entries = MockProvider::parse_transcript(text).unwrap();
    assert_eq!(entries.len(), 2);
    let bad = MockProvider::parse_transcript("{\"match\":\"sequence\"}\n{oops");
    assert!(matches!(bad, Err(GatewayError::Transcript { line: 1, .. })));
}

#[test]
fn invalid_requests_never_reach_the_provider() {
    let gw = Gateway::from_fn(|_| Ok(ChatResponse::new("x", FinishReason::Stop, "t")));
    let mut r = req("x");
    r.temperature = -0.5;
    assert!(matches!(gw.complete(&r), Err(GatewayError::InvalidRequest(_))));
    assert_eq!(gw.provider_calls(), 0);
}
