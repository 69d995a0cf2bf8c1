//! Mock inference endpoint speaking the same wire protocol as a real server.
//!
//! Backs the test suite and the `mock-serve` subcommand. Every request is
//! logged so tests can assert on exactly what was sent.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde_json::json;

use super::ExtractError;
use crate::chunking::{make_chunks, ChunkSpec};
use crate::corpus::Catalog;
use crate::tokenize::Tokenizer;

/// What the stub answers with.
#[derive(Debug, Clone)]
pub enum MockBehavior {
    /// Ground-truth continuation for any known chunk prefix, empty otherwise.
    EchoTruth,
    /// The same fixed string for every request.
    FixedString(String),
    /// Ground truth with each word independently replaced by junk with
    /// probability `p`; deterministic per (seed, prompt).
    TruthWithNoise { p: f64, seed: u64 },
    /// Locate the prompt's token stream inside a book and return the actual
    /// continuation, honoring the request's `max_tokens` (so it
    /// over-generates relative to the target and exercises client-side
    /// truncation).
    BookLookup,
}

impl MockBehavior {
    pub fn parse(s: &str) -> Option<Self> {
        if s == "echo-truth" {
            Some(MockBehavior::EchoTruth)
        } else if s == "book-lookup" {
            Some(MockBehavior::BookLookup)
        } else if let Some(rest) = s.strip_prefix("fixed:") {
            Some(MockBehavior::FixedString(rest.to_string()))
        } else if let Some(rest) = s.strip_prefix("noise:") {
            let p: f64 = rest.parse().ok()?;
            Some(MockBehavior::TruthWithNoise { p, seed: 0 })
        } else {
            None
        }
    }
}

/// One logged request, in arrival order.
#[derive(Debug, Clone)]
pub struct MockRequest {
    pub ordinal: usize,
    pub path: String,
    pub model: String,
    /// Raw prompt, or the user message content in chat mode.
    pub prompt: String,
    /// Message roles in body order; empty for raw completions.
    pub roles: Vec<String>,
    pub max_tokens: usize,
    pub temperature: f64,
}

/// Behavior plus the corpus-derived lookup tables it needs.
pub struct MockScript {
    behavior: MockBehavior,
    /// Chunk prefix text -> target text, for truth-backed behaviors.
    prefix_map: HashMap<String, String>,
    /// Trimmed token stream per book, for BookLookup.
    book_streams: Vec<(String, Vec<u32>)>,
    tok: Arc<dyn Tokenizer>,
}

impl MockScript {
    /// Build the lookup tables from a trimmed catalog.
    ///
    /// The prefix map covers every chunk of every usable book; because
    /// windows advance by the stride, it also covers every context an
    /// autoregressive run on the truth path will send when
    /// stride == target_len.
    pub fn build(
        behavior: MockBehavior,
        catalog: &Catalog,
        tok: Arc<dyn Tokenizer>,
        spec: &ChunkSpec,
    ) -> Result<Self, ExtractError> {
        let mut prefix_map = HashMap::new();
        let mut book_streams = Vec::new();
        for book in &catalog.books {
            if !book.usable {
                continue;
            }
            let chunks = make_chunks(book, tok.as_ref(), spec)
                .map_err(|e| ExtractError::MalformedResponse(format!("mock build: {e}")))?;
            for chunk in chunks {
                prefix_map.insert(chunk.prefix_text, chunk.target_text);
            }
            let seq = tok.encode(&book.trimmed_text)?;
            book_streams.push((book.book_id.clone(), seq.ids));
        }
        Ok(Self {
            behavior,
            prefix_map,
            book_streams,
            tok,
        })
    }

    /// A script with no corpus tables; only FixedString behaves usefully.
    pub fn fixed(text: &str, tok: Arc<dyn Tokenizer>) -> Self {
        Self {
            behavior: MockBehavior::FixedString(text.to_string()),
            prefix_map: HashMap::new(),
            book_streams: Vec::new(),
            tok,
        }
    }

    fn respond(&self, prompt: &str, max_tokens: usize) -> String {
        match &self.behavior {
            MockBehavior::EchoTruth => self.prefix_map.get(prompt).cloned().unwrap_or_default(),
            MockBehavior::FixedString(s) => s.clone(),
            MockBehavior::TruthWithNoise { p, seed } => {
                let truth = self.prefix_map.get(prompt).cloned().unwrap_or_default();
                corrupt_words(&truth, *p, *seed ^ fnv1a(prompt.as_bytes()))
            }
            MockBehavior::BookLookup => self.lookup_continuation(prompt, max_tokens),
        }
    }

    fn lookup_continuation(&self, prompt: &str, max_tokens: usize) -> String {
        let Ok(needle) = self.tok.encode(prompt) else {
            return String::new();
        };
        if needle.ids.is_empty() {
            return String::new();
        }
        for (_, stream) in &self.book_streams {
            if stream.len() < needle.ids.len() {
                continue;
            }
            if let Some(pos) = find_subsequence(stream, &needle.ids) {
                let start = pos + needle.ids.len();
                let end = (start + max_tokens).min(stream.len());
                return self.tok.decode(&stream[start..end]).unwrap_or_default();
            }
        }
        String::new()
    }
}

fn find_subsequence(haystack: &[u32], needle: &[u32]) -> Option<usize> {
    haystack
        .windows(needle.len())
        .position(|window| window == needle)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf29ce484222325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

fn corrupt_words(text: &str, p: f64, seed: u64) -> String {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    text.split_whitespace()
        .map(|w| {
            if rng.random::<f64>() < p {
                format!("junk{}", rng.random_range(0..1_000_000u64))
            } else {
                w.to_string()
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// A running stub endpoint. Shuts down on drop.
pub struct MockServer {
    server: Arc<tiny_http::Server>,
    workers: Vec<JoinHandle<()>>,
    log: Arc<Mutex<Vec<MockRequest>>>,
    port: u16,
}

impl MockServer {
    /// Bind 127.0.0.1:`port` (0 picks a free port) and serve `script`.
    pub fn serve(script: MockScript, port: u16) -> Result<Self, ExtractError> {
        let server = tiny_http::Server::http(("127.0.0.1", port)).map_err(|e| {
            ExtractError::MockBind {
                port,
                message: e.to_string(),
            }
        })?;
        let bound_port = match server.server_addr() {
            tiny_http::ListenAddr::IP(addr) => addr.port(),
            _ => port,
        };
        let server = Arc::new(server);
        let script = Arc::new(script);
        let log: Arc<Mutex<Vec<MockRequest>>> = Arc::new(Mutex::new(Vec::new()));

        let mut workers = Vec::new();
        for _ in 0..4 {
            let server = Arc::clone(&server);
            let script = Arc::clone(&script);
            let log = Arc::clone(&log);
            workers.push(std::thread::spawn(move || loop {
                match server.recv() {
                    Ok(request) => handle_request(request, &script, &log),
                    Err(_) => break,
                }
            }));
        }

        Ok(Self {
            server,
            workers,
            log,
            port: bound_port,
        })
    }

    pub fn port(&self) -> u16 {
        self.port
    }

    pub fn base_url(&self) -> String {
        format!("http://127.0.0.1:{}", self.port)
    }

    /// Snapshot of every request handled so far, in arrival order.
    pub fn requests(&self) -> Vec<MockRequest> {
        self.log.lock().expect("mock log").clone()
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        // unblock() wakes a single blocked recv(); one call per worker.
        for _ in 0..self.workers.len() {
            self.server.unblock();
        }
        for worker in self.workers.drain(..) {
            let _ = worker.join();
        }
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.stop();
    }
}

fn handle_request(
    mut request: tiny_http::Request,
    script: &MockScript,
    log: &Mutex<Vec<MockRequest>>,
) {
    let path = request.url().to_string();
    let mut body = String::new();
    if request.as_reader().read_to_string(&mut body).is_err() {
        respond_status(request, 400, "unreadable body");
        return;
    }
    let chat = match path.as_str() {
        "/v1/completions" => false,
        "/v1/chat/completions" => true,
        _ => {
            respond_status(request, 404, "unknown path");
            return;
        }
    };
    let Ok(value) = serde_json::from_str::<serde_json::Value>(&body) else {
        respond_status(request, 400, "invalid json");
        return;
    };

    let model = value
        .get("model")
        .and_then(|m| m.as_str())
        .unwrap_or_default()
        .to_string();
    let max_tokens = value
        .get("max_tokens")
        .and_then(|m| m.as_u64())
        .unwrap_or(16) as usize;
    let temperature = value
        .get("temperature")
        .and_then(|t| t.as_f64())
        .unwrap_or(1.0);

    let (prompt, roles) = if chat {
        let empty = Vec::new();
        let messages = value
            .get("messages")
            .and_then(|m| m.as_array())
            .unwrap_or(&empty);
        let roles: Vec<String> = messages
            .iter()
            .filter_map(|m| m.get("role").and_then(|r| r.as_str()))
            .map(str::to_string)
            .collect();
        let user = messages
            .iter()
            .rev()
            .find(|m| m.get("role").and_then(|r| r.as_str()) == Some("user"))
            .and_then(|m| m.get("content"))
            .and_then(|c| c.as_str())
            .unwrap_or_default()
            .to_string();
        (user, roles)
    } else {
        let prompt = value
            .get("prompt")
            .and_then(|p| p.as_str())
            .unwrap_or_default()
            .to_string();
        (prompt, Vec::new())
    };

    let text = script.respond(&prompt, max_tokens);

    {
        let mut guard = log.lock().expect("mock log");
        let ordinal = guard.len();
        guard.push(MockRequest {
            ordinal,
            path: path.clone(),
            model,
            prompt,
            roles,
            max_tokens,
            temperature,
        });
    }

    let payload = if chat {
        json!({
            "id": "mock-chat",
            "object": "chat.completion",
            "choices": [{
                "index": 0,
                "message": {"role": "assistant", "content": text},
                "finish_reason": "stop",
            }],
        })
    } else {
        json!({
            "id": "mock-cmpl",
            "object": "text_completion",
            "choices": [{
                "index": 0,
                "text": text,
                "finish_reason": "stop",
            }],
        })
    };
    let data = payload.to_string();
    let response = tiny_http::Response::from_string(data).with_header(
        tiny_http::Header::from_bytes(&b"Content-Type"[..], &b"application/json"[..])
            .expect("static header"),
    );
    let _ = request.respond(response);
}

fn respond_status(request: tiny_http::Request, code: u16, message: &str) {
    let response = tiny_http::Response::from_string(message).with_status_code(code);
    let _ = request.respond(response);
}
