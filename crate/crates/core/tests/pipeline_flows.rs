//! Extraction-flow integration tests against the in-process mock: resume
//! semantics, retry behavior, chat-template shape, the noise model, and
//! autoregressive divergence after a corrupted step.

mod common;

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use common::oracles;
use common::{catalog_of, mock_endpoint, synthetic_book};

use memprobe_core::chunking::{make_chunks, ChunkSpec};
use memprobe_core::extract::{
    complete, run_autoregressive, run_piecewise, ExtractError, MockBehavior, MockScript,
    MockServer, Prompt, PromptMode, RunJournal,
};
use memprobe_core::metrics::{score_all, Granularity};
use memprobe_core::tokenize::{Tokenizer, WhitespaceTokenizer};

/// Minimal scripted endpoint for failure-injection tests: each incoming
/// request is answered by `responder(ordinal, prompt)`.
struct ScriptedServer {
    server: Arc<tiny_http::Server>,
    handle: Option<std::thread::JoinHandle<()>>,
    prompts: Arc<Mutex<Vec<String>>>,
    port: u16,
}

enum Scripted {
    Ok(String),
    Status(u16),
    Garbage,
}

impl ScriptedServer {
    fn start<F>(responder: F) -> Self
    where
        F: Fn(usize, &str) -> Scripted + Send + Sync + 'static,
    {
        let server = Arc::new(tiny_http::Server::http(("127.0.0.1", 0)).expect("bind"));
        let port = match server.server_addr() {
            tiny_http::ListenAddr::IP(addr) => addr.port(),
            _ => unreachable!("tcp listener"),
        };
        let prompts: Arc<Mutex<Vec<String>>> = Arc::new(Mutex::new(Vec::new()));
        let counter = AtomicUsize::new(0);
        let s2 = Arc::clone(&server);
        let p2 = Arc::clone(&prompts);
        let handle = std::thread::spawn(move || loop {
            match s2.recv() {
                Ok(mut rq) => {
                    let mut body = String::new();
                    let _ = rq.as_reader().read_to_string(&mut body);
                    let value: serde_json::Value =
                        serde_json::from_str(&body).unwrap_or_default();
                    let prompt = value
                        .get("prompt")
                        .and_then(|p| p.as_str())
                        .unwrap_or_default()
                        .to_string();
                    let ordinal = counter.fetch_add(1, Ordering::SeqCst);
                    p2.lock().expect("prompts").push(prompt.clone());
                    match responder(ordinal, &prompt) {
                        Scripted::Ok(text) => {
                            let payload = serde_json::json!({
                                "choices": [{"index": 0, "text": text, "finish_reason": "stop"}]
                            });
                            let _ = rq.respond(tiny_http::Response::from_string(
                                payload.to_string(),
                            ));
                        }
                        Scripted::Status(code) => {
                            let _ = rq.respond(
                                tiny_http::Response::from_string("err").with_status_code(code),
                            );
                        }
                        Scripted::Garbage => {
                            let _ =
                                rq.respond(tiny_http::Response::from_string("not json at all"));
                        }
                    }
                }
                Err(_) => break,
            }
        });
        Self {
            server,
            handle: Some(handle),
            prompts,
            port,
        }
    }

    fn base_url(&self) -> String {
        format!("http://127.0.0.1:{}", self.port)
    }

    fn prompts(&self) -> Vec<String> {
        self.prompts.lock().expect("prompts").clone()
    }
}

impl Drop for ScriptedServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(handle) = self.handle.take() {
            let _ = handle.join();
        }
    }
}

#[test]
fn resume_skips_completed_chunks_per_request_log() {
    let tok: Arc<dyn Tokenizer> = Arc::new(WhitespaceTokenizer::new());
    let spec = ChunkSpec {
        prefix_len: 6,
        target_len: 3,
        stride: 3,
    };
    let book = synthetic_book("r", 24);
    let catalog = catalog_of(vec![book.clone()]);
    let chunks = make_chunks(&book, tok.as_ref(), &spec).expect("chunks");
    assert!(chunks.len() >= 5, "need several chunks, got {}", chunks.len());

    // First run: the endpoint dies on chunk 2's prefix.
    let truth: HashMap<String, String> = chunks
        .iter()
        .map(|c| (c.prefix_text.clone(), c.target_text.clone()))
        .collect();
    let poison = chunks[2].prefix_text.clone();
    let failing = ScriptedServer::start(move |_, prompt| {
        if prompt == poison {
            Scripted::Status(500)
        } else {
            Scripted::Ok(truth[prompt].clone())
        }
    });
    let mut cfg = mock_endpoint(failing.base_url());
    cfg.max_in_flight = 1; // sequential so the abort point is deterministic

    let dir = tempfile::tempdir().expect("tempdir");
    let journal_path = dir.path().join("records.jsonl");
    let mut journal = RunJournal::open(&journal_path).expect("journal opens");
    let err = run_piecewise(&cfg, &chunks, tok.as_ref(), Some(&mut journal)).unwrap_err();
    match err {
        ExtractError::ChunkFailed { book_id, index, .. } => {
            assert_eq!(book_id, "r");
            assert_eq!(index, 2, "failure names the chunk");
        }
        other => panic!("unexpected error: {other}"),
    }
    // Completed work was persisted before the abort surfaced.
    assert_eq!(journal.len(), 2);
    drop(failing);

    // Resume against a healthy mock: only chunks >= 2 go over the wire.
    let script = MockScript::build(MockBehavior::EchoTruth, &catalog, Arc::clone(&tok), &spec)
        .expect("script");
    let server = MockServer::serve(script, 0).expect("mock serves");
    let cfg = mock_endpoint(server.base_url());
    let mut journal = RunJournal::open(&journal_path).expect("journal reopens");
    assert_eq!(journal.len(), 2, "journal survives process restart");
    let records =
        run_piecewise(&cfg, &chunks, tok.as_ref(), Some(&mut journal)).expect("resume succeeds");
    assert_eq!(records.len(), chunks.len());

    let requested: Vec<String> = server.requests().into_iter().map(|r| r.prompt).collect();
    let expected: Vec<String> = chunks[2..].iter().map(|c| c.prefix_text.clone()).collect();
    assert_eq!(
        requested.len(),
        expected.len(),
        "only the unfinished chunks are re-requested"
    );
    for prefix in &expected {
        assert!(requested.contains(prefix));
    }
    for chunk in &chunks[..2] {
        assert!(!requested.contains(&chunk.prefix_text));
    }
    // Records come back in (book, index) order with correct content.
    for (record, chunk) in records.iter().zip(&chunks) {
        assert_eq!(record.chunk_index, Some(chunk.index));
        assert_eq!(record.generated_text, chunk.target_text);
    }
}

#[test]
fn transient_failures_retry_then_succeed() {
    let server = ScriptedServer::start(|ordinal, _| {
        if ordinal < 2 {
            Scripted::Status(500)
        } else {
            Scripted::Ok("recovered text".to_string())
        }
    });
    let mut cfg = mock_endpoint(server.base_url());
    cfg.max_retries = 3;
    let text = complete(&cfg, &Prompt::Raw("p".to_string())).expect("retries succeed");
    assert_eq!(text, "recovered text");
    assert_eq!(server.prompts().len(), 3, "two failures plus one success");
}

#[test]
fn exhausted_retries_surface_an_error() {
    let server = ScriptedServer::start(|_, _| Scripted::Status(500));
    let mut cfg = mock_endpoint(server.base_url());
    cfg.max_retries = 2;
    let err = complete(&cfg, &Prompt::Raw("p".to_string())).unwrap_err();
    match err {
        ExtractError::Endpoint { attempts, message } => {
            assert_eq!(attempts, 3);
            assert!(message.contains("500"), "got {message}");
        }
        other => panic!("unexpected error: {other}"),
    }
    assert_eq!(server.prompts().len(), 3);
}

#[test]
fn malformed_response_body_is_an_error() {
    let server = ScriptedServer::start(|_, _| Scripted::Garbage);
    let cfg = mock_endpoint(server.base_url());
    let err = complete(&cfg, &Prompt::Raw("p".to_string())).unwrap_err();
    assert!(matches!(err, ExtractError::MalformedResponse(_)), "got {err}");
}

#[test]
fn chat_mode_sends_exactly_system_then_user() {
    let tok: Arc<dyn Tokenizer> = Arc::new(WhitespaceTokenizer::new());
    let spec = ChunkSpec {
        prefix_len: 6,
        target_len: 3,
        stride: 3,
    };
    let book = synthetic_book("c", 18);
    let catalog = catalog_of(vec![book.clone()]);
    let chunks = make_chunks(&book, tok.as_ref(), &spec).expect("chunks");

    let script = MockScript::build(MockBehavior::EchoTruth, &catalog, Arc::clone(&tok), &spec)
        .expect("script");
    let server = MockServer::serve(script, 0).expect("mock serves");
    let mut cfg = mock_endpoint(server.base_url());
    cfg.mode = PromptMode::Chat;

    let records = run_piecewise(&cfg, &chunks, tok.as_ref(), None).expect("chat run");
    for request in server.requests() {
        assert_eq!(request.path, "/v1/chat/completions");
        assert_eq!(request.roles, vec!["system", "user"], "no assistant priming");
    }
    // Echo-truth lookups work identically through the chat route.
    for (record, chunk) in records.iter().zip(&chunks) {
        assert_eq!(record.generated_text, chunk.target_text);
    }
}

#[test]
fn noise_mock_matches_analytic_and_monte_carlo_expectation() {
    let tok: Arc<dyn Tokenizer> = Arc::new(WhitespaceTokenizer::new());
    let spec = ChunkSpec {
        prefix_len: 10,
        target_len: 20,
        stride: 20,
    };
    let book = synthetic_book("n", 2100);
    let catalog = catalog_of(vec![book.clone()]);
    let chunks = make_chunks(&book, tok.as_ref(), &spec).expect("chunks");
    assert!(chunks.len() >= 100);

    let p = 0.5;
    let script = MockScript::build(
        MockBehavior::TruthWithNoise { p, seed: 99 },
        &catalog,
        Arc::clone(&tok),
        &spec,
    )
    .expect("script");
    let server = MockServer::serve(script, 0).expect("mock serves");
    let cfg = mock_endpoint(server.base_url());

    let records = run_piecewise(&cfg, &chunks, tok.as_ref(), None).expect("noisy run");
    let scores = score_all(&records, &chunks, &catalog, tok.as_ref(), &spec, Granularity::Word)
        .expect("scores");
    let measured: f64 =
        scores.iter().map(|s| s.scores.jaccard).sum::<f64>() / scores.len() as f64;

    // Analytic: targets are 20 distinct words; k ~ Binomial(20, p) words get
    // replaced by junk outside the vocabulary, so J = (20-k)/(20+k).
    let n = spec.target_len as f64;
    let mut analytic = 0.0;
    for k in 0..=spec.target_len {
        let binom = choose(spec.target_len, k) * p.powi(k as i32) * (1.0 - p).powi((spec.target_len - k) as i32);
        analytic += binom * (n - k as f64) / (n + k as f64);
    }

    // Monte-Carlo oracle over the same noise process, independent rng.
    let mut rng = ChaCha12Rng::seed_from_u64(0x4E01);
    let mut mc_total = 0.0;
    let mut mc_n = 0usize;
    for chunk in chunks.iter().take(40) {
        let target: Vec<String> = chunk
            .target_text
            .split_whitespace()
            .map(str::to_string)
            .collect();
        for _ in 0..50 {
            let noisy: Vec<String> = target
                .iter()
                .enumerate()
                .map(|(i, w)| {
                    if rng.random::<f64>() < p {
                        format!("sim{}x{i}", rng.random_range(0..1_000_000u64))
                    } else {
                        w.clone()
                    }
                })
                .collect();
            mc_total += oracles::jaccard(&noisy, &target);
            mc_n += 1;
        }
    }
    let monte_carlo = mc_total / mc_n as f64;

    assert!(
        (monte_carlo - analytic).abs() < 0.03,
        "oracle simulation {monte_carlo} vs analytic {analytic}"
    );
    assert!(
        (measured - analytic).abs() < 0.05,
        "measured {measured} vs analytic {analytic}"
    );
}

fn choose(n: usize, k: usize) -> f64 {
    let mut out = 1.0;
    for i in 0..k {
        out *= (n - i) as f64 / (i + 1) as f64;
    }
    out
}

#[test]
fn book_lookup_over_generation_is_truncated_by_the_client() {
    let tok: Arc<dyn Tokenizer> = Arc::new(WhitespaceTokenizer::new());
    let spec = ChunkSpec {
        prefix_len: 8,
        target_len: 4,
        stride: 4,
    };
    let book = synthetic_book("bl", 60);
    let catalog = catalog_of(vec![book.clone()]);
    let chunks = make_chunks(&book, tok.as_ref(), &spec).expect("chunks");

    let script = MockScript::build(MockBehavior::BookLookup, &catalog, Arc::clone(&tok), &spec)
        .expect("script");
    let server = MockServer::serve(script, 0).expect("mock serves");
    let cfg = mock_endpoint(server.base_url());

    let records = run_piecewise(&cfg, &chunks, tok.as_ref(), None).expect("lookup run");
    for (record, chunk) in records.iter().zip(&chunks) {
        assert_eq!(record.generated_ids.len(), spec.target_len, "truncated");
        assert_eq!(record.generated_text, chunk.target_text);
        // The server really did over-generate; the raw body kept the extra.
        if chunk.start_token + spec.prefix_len + spec.target_len + 8
            <= 60
        {
            let raw = record.raw_completion.as_deref().expect("raw preserved");
            assert!(raw.split_whitespace().count() > spec.target_len);
        }
    }
}

#[test]
fn autoregression_diverges_exactly_at_the_corrupted_step() {
    let tok: Arc<dyn Tokenizer> = Arc::new(WhitespaceTokenizer::new());
    let spec = ChunkSpec {
        prefix_len: 12,
        target_len: 4,
        stride: 4,
    };
    let book = synthetic_book("d", 60); // budget 48 tokens = 12 steps
    let corrupted_step = 3usize;

    // Position-scripted endpoint: step i answers with the true target of
    // window i, except step k, whose first token is corrupted.
    let stream = tok.encode(&book.trimmed_text).expect("encode");
    let step_texts: Vec<String> = (0..12)
        .map(|i| {
            let start = spec.prefix_len + i * spec.target_len;
            let mut words: Vec<String> = stream.ids[start..start + spec.target_len]
                .iter()
                .map(|&id| tok.decode(&[id]).expect("decode"))
                .collect();
            if i == corrupted_step {
                words[0] = "corrupted0".to_string();
            }
            words.join(" ")
        })
        .collect();
    let responses = step_texts.clone();
    let server = ScriptedServer::start(move |ordinal, _| {
        Scripted::Ok(responses.get(ordinal).cloned().unwrap_or_default())
    });
    let cfg = mock_endpoint(server.base_url());

    let outcome =
        run_autoregressive(&cfg, &book, tok.as_ref(), &spec, 100).expect("run succeeds");
    assert!(outcome.error.is_none());
    let transcript_words: Vec<String> = outcome
        .record
        .generated_text
        .split_whitespace()
        .map(str::to_string)
        .collect();

    // Independent simulation of the window recurrence over word values.
    let seed_words: Vec<String> = stream.ids[..spec.prefix_len]
        .iter()
        .map(|&id| tok.decode(&[id]).expect("decode"))
        .collect();
    let mut sim: Vec<String> = Vec::new();
    for step in step_texts.iter().take(12) {
        sim.extend(step.split_whitespace().map(str::to_string));
    }
    assert_eq!(transcript_words, sim, "transcript equals the simulated recurrence");

    // Divergence lands exactly at token corrupted_step * target_len.
    let truth_words: Vec<String> = stream.ids[spec.prefix_len..]
        .iter()
        .map(|&id| tok.decode(&[id]).expect("decode"))
        .collect();
    let divergence = corrupted_step * spec.target_len;
    assert_eq!(transcript_words[..divergence], truth_words[..divergence]);
    assert_ne!(transcript_words[divergence], truth_words[divergence]);

    // While the corrupted token sits inside the sliding window, every
    // context sent to the endpoint carries it.
    let prompts = server.prompts();
    let window_steps = spec.prefix_len / spec.target_len; // 3 steps to slide out
    for (i, prompt) in prompts.iter().enumerate() {
        let contains = prompt.split_whitespace().any(|w| w == "corrupted0");
        let should = i > corrupted_step && i <= corrupted_step + window_steps;
        assert_eq!(
            contains, should,
            "context window membership at step {i}: {prompt:?}"
        );
        let _ = seed_words.len();
    }
}

#[test]
fn autoregression_with_zero_steps_is_empty() {
    let tok: Arc<dyn Tokenizer> = Arc::new(WhitespaceTokenizer::new());
    let spec = ChunkSpec {
        prefix_len: 10,
        target_len: 5,
        stride: 5,
    };
    let book = synthetic_book("z", 40);
    // No request should ever be made; a dead endpoint proves it.
    let mut cfg = mock_endpoint("http://127.0.0.1:1".to_string());
    cfg.max_retries = 0;
    let outcome = run_autoregressive(&cfg, &book, tok.as_ref(), &spec, 0).expect("zero steps");
    assert!(outcome.error.is_none());
    assert_eq!(outcome.record.generated_ids.len(), 0);
    assert_eq!(outcome.record.generated_text, "");
    assert_eq!(outcome.record.steps_completed, Some(0));
}

#[test]
fn too_short_book_is_rejected_up_front() {
    let tok: Arc<dyn Tokenizer> = Arc::new(WhitespaceTokenizer::new());
    let spec = ChunkSpec::default();
    let book = synthetic_book("tiny", 100);
    let cfg = mock_endpoint("http://127.0.0.1:1".to_string());
    let err = run_autoregressive(&cfg, &book, tok.as_ref(), &spec, 10).unwrap_err();
    assert!(matches!(err, ExtractError::BookTooShort { needed: 500, .. }));
}
