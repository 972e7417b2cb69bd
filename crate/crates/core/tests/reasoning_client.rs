mod common;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use aesthete::attribute::AestheticAttribute;
use aesthete::reasoning::{
    build_prompt, reason_cached, CacheMode, Completion, HttpMllm, ImageSource, ImageTransport, InvokeError, Mllm,
    MllmConfig, PromptBundle, PromptVariant, ReasoningError, ReasoningRequest, TaskInput, TranscriptCache,
};
use common::{chat_body, dead_address, fixtures, MockServer, Reply, WELL_FORMED};

fn config(endpoint: String, retries: u32) -> MllmConfig {
    MllmConfig {
        endpoint,
        max_retries: retries,
        backoff_base_ms: 1,
        timeout_secs: 5.0,
        api_key_env: "AESTHETE_TEST_UNSET_KEY".into(),
        ..MllmConfig::default()
    }
}

fn outfit() -> Vec<ImageSource> {
    let cat = fixtures().join("cat/images");
    vec![ImageSource::Path(cat.join("t01.svg")), ImageSource::Path(cat.join("b01.svg"))]
}

fn request() -> ReasoningRequest {
    ReasoningRequest {
        outfit_images: outfit(),
        task: TaskInput::Cir { category: "shoes".into() },
        variant: PromptVariant::default(),
    }
}

fn prompt() -> PromptBundle {
    let r = request();
    build_prompt(&r.outfit_images, &r.task, r.variant, ImageTransport::Inline, 16).unwrap()
}

#[test]
fn returns_completion_text_verbatim() {
    let server = MockServer::start(|_, _| Reply::new(200, chat_body("exactly this text")));
    let client = HttpMllm::new(config(server.url("/v1/chat/completions"), 0)).unwrap();
    let c = client.complete(&prompt()).unwrap();
    assert_eq!(c, Completion { text: "exactly this text".into(), attempts: 1 });

    let seen = &server.requests()[0];
    assert_eq!(seen.method, "POST");
    let body: serde_json::Value = serde_json::from_str(&seen.body).unwrap();
    assert_eq!(body["model"], "gpt-4o");
    assert_eq!(body["temperature"], 0.0);
}

#[test]
fn rate_limited_twice_then_succeeds() {
    let server = MockServer::start(|_, n| if n < 2 { Reply::new(429, "{}") } else { Reply::new(200, chat_body("ok")) });
    let client = HttpMllm::new(config(server.url("/"), 3)).unwrap();
    let c = client.complete(&prompt()).unwrap();
    assert_eq!(c.text, "ok");
    assert_eq!(c.attempts, 3, "two retries recorded");
    assert_eq!(server.count(), 3);
}

#[test]
fn rate_limit_exhausts_retries() {
    let server = MockServer::start(|_, _| Reply::new(429, "{}"));
    let client = HttpMllm::new(config(server.url("/"), 2)).unwrap();
    assert_eq!(client.complete(&prompt()).unwrap_err(), InvokeError::RateLimited { attempts: 3 });
}

#[test]
fn endpoint_down_with_one_retry_makes_two_attempts() {
    let client = HttpMllm::new(config(format!("http://{}/v1", dead_address()), 1)).unwrap();
    match client.complete(&prompt()).unwrap_err() {
        InvokeError::EndpointUnavailable { attempts, .. } => assert_eq!(attempts, 2),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn server_errors_are_retried_auth_errors_are_not() {
    let server = MockServer::start(|_, _| Reply::new(503, "{}"));
    let client = HttpMllm::new(config(server.url("/"), 1)).unwrap();
    assert!(matches!(client.complete(&prompt()), Err(InvokeError::EndpointUnavailable { attempts: 2, .. })));

    let server = MockServer::start(|_, _| Reply::new(401, "{}"));
    let client = HttpMllm::new(config(server.url("/"), 3)).unwrap();
    assert_eq!(client.complete(&prompt()).unwrap_err(), InvokeError::AuthFailure { status: 401 });
    assert_eq!(server.count(), 1);

    let server = MockServer::start(|_, _| Reply::new(400, "bad schema"));
    let client = HttpMllm::new(config(server.url("/"), 3)).unwrap();
    assert!(matches!(client.complete(&prompt()), Err(InvokeError::Rejected { status: 400, .. })));
}

#[test]
fn slow_endpoint_times_out() {
    let server = MockServer::start(|_, _| Reply::new(200, chat_body("late")).delayed(Duration::from_millis(1500)));
    let cfg = MllmConfig { timeout_secs: 0.2, ..config(server.url("/"), 0) };
    let client = HttpMllm::new(cfg).unwrap();
    assert_eq!(client.complete(&prompt()).unwrap_err(), InvokeError::Timeout { attempts: 1 });
}

#[test]
fn bearer_key_is_sent() {
    std::env::set_var("AESTHETE_TEST_KEY_SENT", "sk-test-123");
    let server = MockServer::start(|_, _| Reply::new(200, chat_body("ok")));
    let cfg = MllmConfig { api_key_env: "AESTHETE_TEST_KEY_SENT".into(), ..config(server.url("/"), 0) };
    HttpMllm::new(cfg).unwrap().complete(&prompt()).unwrap();
    assert_eq!(server.requests()[0].header("authorization"), Some("Bearer sk-test-123"));
}

#[test]
fn backoff_grows_exponentially() {
    let server = MockServer::start(|_, n| if n < 3 { Reply::new(429, "{}") } else { Reply::new(200, chat_body("ok")) });
    let cfg = MllmConfig { backoff_base_ms: 40, ..config(server.url("/"), 3) };
    let start = Instant::now();
    HttpMllm::new(cfg).unwrap().complete(&prompt()).unwrap();
    // 40 + 80 + 160 ms of sleeping.
    assert!(start.elapsed() >= Duration::from_millis(280));
}

/// Scripted in-process model that counts calls.
struct Scripted {
    replies: Vec<String>,
    calls: AtomicUsize,
}

impl Scripted {
    fn new(replies: &[&str]) -> Self {
        Self { replies: replies.iter().map(|s| s.to_string()).collect(), calls: AtomicUsize::new(0) }
    }
}

impl Mllm for Scripted {
    fn complete(&self, _: &PromptBundle) -> Result<Completion, InvokeError> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(Completion { text: self.replies[n.min(self.replies.len() - 1)].clone(), attempts: 1 })
    }
}

#[test]
fn second_identical_call_is_a_cache_hit_with_no_model_call() {
    let dir = tempfile::tempdir().unwrap();
    let cache = TranscriptCache::new(dir.path(), CacheMode::Live);
    let model = Scripted::new(&[WELL_FORMED]);
    let cfg = MllmConfig::default();

    let first = reason_cached(&request(), Some(&model), &cfg, &cache).unwrap();
    assert!(!first.from_cache);
    assert_eq!(first.invocations, 1);
    assert!(first.record.profile.is_complete());

    let second = reason_cached(&request(), Some(&model), &cfg, &cache).unwrap();
    assert!(second.from_cache);
    assert_eq!(second.invocations, 0);
    assert_eq!(model.calls.load(Ordering::SeqCst), 1);
    assert_eq!(second.record, first.record);
    assert_eq!(
        TranscriptCache::encode(&second.key, &second.record),
        std::fs::read_to_string(cache.path_for(&first.key)).unwrap()
    );
}

#[test]
fn model_name_changes_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cache = TranscriptCache::new(dir.path(), CacheMode::Live);
    let model = Scripted::new(&[WELL_FORMED]);
    let a = reason_cached(&request(), Some(&model), &MllmConfig::default(), &cache).unwrap();
    let other = MllmConfig { model: "other-model".into(), ..MllmConfig::default() };
    let b = reason_cached(&request(), Some(&model), &other, &cache).unwrap();
    assert_ne!(a.key, b.key);
    assert!(!b.from_cache);
    assert_eq!(model.calls.load(Ordering::SeqCst), 2);

    let warmer = MllmConfig { temperature: 0.7, ..MllmConfig::default() };
    let c = reason_cached(&request(), Some(&model), &warmer, &cache).unwrap();
    assert_ne!(c.key, a.key);
}

#[test]
fn unparsable_reply_is_retried_once() {
    let dir = tempfile::tempdir().unwrap();
    let cache = TranscriptCache::new(dir.path(), CacheMode::Live);
    let model = Scripted::new(&["I cannot help with that.", WELL_FORMED]);
    let r = reason_cached(&request(), Some(&model), &MllmConfig::default(), &cache).unwrap();
    assert_eq!(r.invocations, 2);

    let dir = tempfile::tempdir().unwrap();
    let cache = TranscriptCache::new(dir.path(), CacheMode::Live);
    let model = Scripted::new(&["no json", "{\"identification\": \"x\"}", WELL_FORMED]);
    let err = reason_cached(&request(), Some(&model), &MllmConfig::default(), &cache).unwrap_err();
    assert!(matches!(err, ReasoningError::Parse(_)), "{err:?}");
    assert_eq!(model.calls.load(Ordering::SeqCst), 2);
    assert!(std::fs::read_dir(dir.path()).map(|d| d.count()).unwrap_or(0) <= 1);
}

#[test]
fn replay_miss_never_calls_the_model() {
    let dir = tempfile::tempdir().unwrap();
    let cache = TranscriptCache::new(dir.path(), CacheMode::Replay);
    let model = Scripted::new(&[WELL_FORMED]);
    let err = reason_cached(&request(), Some(&model), &MllmConfig::default(), &cache).unwrap_err();
    assert!(matches!(err, ReasoningError::CacheMissInReplayMode { .. }));
    assert_eq!(model.calls.load(Ordering::SeqCst), 0);
}

#[test]
fn live_miss_against_http_endpoint_stores_record() {
    let server = MockServer::start(|_, _| Reply::new(200, chat_body(&format!("```json\n{WELL_FORMED}\n```\nDone."))));
    let dir = tempfile::tempdir().unwrap();
    let cache = TranscriptCache::new(dir.path(), CacheMode::Live);
    let cfg = config(server.url("/"), 0);
    let client = HttpMllm::new(cfg.clone()).unwrap();
    let r = reason_cached(&request(), Some(&client), &cfg, &cache).unwrap();
    assert_eq!(r.record.target_description, "Brown leather loafers with a classic profile");
    assert_eq!(r.record.profile.thoughts[&AestheticAttribute::Balance].keyword, "loafers");
    assert!(cache.path_for(&r.key).exists());
    let again = reason_cached(&request(), Some(&client), &cfg, &cache).unwrap();
    assert!(again.from_cache);
    assert_eq!(server.count(), 1);
}

#[test]
fn ablation_toggles_change_the_prompt_key() {
    let cfg = MllmConfig::default();
    let key = |variant| {
        let r = ReasoningRequest { variant, ..request() };
        aesthete::reasoning::prepare(&r, &cfg).unwrap().1
    };
    let full = key(PromptVariant::default());
    let no_ide = key(PromptVariant { identify: false, aesthetic_thoughts: true });
    let no_aes = key(PromptVariant { identify: true, aesthetic_thoughts: false });
    assert_ne!(full, no_ide);
    assert_ne!(full, no_aes);
    assert_ne!(no_ide, no_aes);
    assert_eq!(full, key(PromptVariant::default()));
}
