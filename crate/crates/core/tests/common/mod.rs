#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

/// A request as seen by [`MockServer`].
#[derive(Debug, Clone)]
pub struct Seen {
    pub method: String,
    pub path: String,
    pub headers: Vec<(String, String)>,
    pub body: String,
}

impl Seen {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers.iter().find(|(k, _)| k.eq_ignore_ascii_case(name)).map(|(_, v)| v.as_str())
    }
}

#[derive(Debug, Clone)]
pub struct Reply {
    pub status: u16,
    pub body: String,
    pub delay: Duration,
}

impl Reply {
    pub fn new(status: u16, body: impl Into<String>) -> Self {
        Self { status, body: body.into(), delay: Duration::ZERO }
    }

    pub fn delayed(mut self, d: Duration) -> Self {
        self.delay = d;
        self
    }
}

type Handler = dyn Fn(&Seen, usize) -> Reply + Send + Sync;

/// Minimal HTTP/1.1 server on a background thread. The handler gets each
/// request and its 0-based sequence number.
pub struct MockServer {
    pub addr: SocketAddr,
    seen: Arc<Mutex<Vec<Seen>>>,
}

fn read_request(stream: &mut TcpStream) -> Option<Seen> {
    let mut reader = BufReader::new(stream.try_clone().ok()?);
    let mut line = String::new();
    reader.read_line(&mut line).ok()?;
    let mut parts = line.split_whitespace();
    let method = parts.next()?.to_string();
    let path = parts.next()?.to_string();
    let mut headers = Vec::new();
    let mut len = 0usize;
    loop {
        let mut h = String::new();
        reader.read_line(&mut h).ok()?;
        let h = h.trim_end();
        if h.is_empty() {
            break;
        }
        if let Some((k, v)) = h.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                len = v.trim().parse().unwrap_or(0);
            }
            headers.push((k.trim().to_string(), v.trim().to_string()));
        }
    }
    let mut body = vec![0u8; len];
    reader.read_exact(&mut body).ok()?;
    Some(Seen { method, path, headers, body: String::from_utf8_lossy(&body).into_owned() })
}

fn reason(status: u16) -> &'static str {
    match status {
        200 => "OK",
        400 => "Bad Request",
        401 => "Unauthorized",
        429 => "Too Many Requests",
        500 => "Internal Server Error",
        503 => "Service Unavailable",
        _ => "Status",
    }
}

impl MockServer {
    pub fn start(handler: impl Fn(&Seen, usize) -> Reply + Send + Sync + 'static) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let seen = Arc::new(Mutex::new(Vec::new()));
        let handler: Arc<Handler> = Arc::new(handler);
        let log = seen.clone();
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { continue };
                let handler = handler.clone();
                let log = log.clone();
                thread::spawn(move || {
                    let Some(req) = read_request(&mut stream) else { return };
                    let n = {
                        let mut l = log.lock().unwrap();
                        l.push(req.clone());
                        l.len() - 1
                    };
                    let reply = handler(&req, n);
                    if !reply.delay.is_zero() {
                        thread::sleep(reply.delay);
                    }
                    let resp = format!(
                        "HTTP/1.1 {} {}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{}",
                        reply.status,
                        reason(reply.status),
                        reply.body.len(),
                        reply.body
                    );
                    let _ = stream.write_all(resp.as_bytes());
                    let _ = stream.flush();
                });
            }
        });
        Self { addr, seen }
    }

    pub fn url(&self, path: &str) -> String {
        format!("http://{}{}", self.addr, path)
    }

    pub fn requests(&self) -> Vec<Seen> {
        self.seen.lock().unwrap().clone()
    }

    pub fn count(&self) -> usize {
        self.seen.lock().unwrap().len()
    }
}

/// An address nothing listens on.
pub fn dead_address() -> SocketAddr {
    let l = TcpListener::bind("127.0.0.1:0").unwrap();
    l.local_addr().unwrap()
}

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

/// Chat-completions response body carrying `content`.
pub fn chat_body(content: &str) -> String {
    serde_json::json!({ "choices": [{ "index": 0, "message": { "role": "assistant", "content": content } }] }).to_string()
}

pub const WELL_FORMED: &str = r#"{
  "identification": "A navy blazer and grey trousers set a formal base.",
  "attributes": {
    "color": {"keyword": "brown", "reason": "warm contrast to navy"},
    "style": {"keyword": "classic", "reason": "matches the tailoring"},
    "occasion": {"keyword": "office", "reason": "business setting"},
    "season": {"keyword": "autumn", "reason": "wool weight"},
    "material": {"keyword": "leather", "reason": "polished finish"},
    "balance": {"keyword": "loafers", "reason": "low profile grounds the look"}
  },
  "target_description": "Brown leather loafers with a classic profile"
}"#;

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use aesthete::datastore::Catalog;
use aesthete::embedder::StaticEmbedder;
use aesthete::reasoning::{Completion, Digest32, InvokeError, Mllm, PromptBundle};
use sha2::{Digest as _, Sha256};

/// Model stand-in keyed by the digests of the images in the prompt.
pub struct KeyedMllm {
    table: HashMap<Vec<Digest32>, String>,
    pub calls: AtomicUsize,
}

pub fn image_digest(catalog: &Catalog, id: &str) -> Digest32 {
    let (_, item) = catalog.get(id).unwrap();
    let bytes = std::fs::read(catalog.image_location(item)).unwrap();
    Digest32(Sha256::digest(&bytes).into())
}

impl KeyedMllm {
    /// `entries`: image ids in prompt order (outfit, then candidates) and
    /// the reply for that prompt.
    pub fn new(catalog: &Catalog, entries: Vec<(Vec<String>, String)>) -> Self {
        let table = entries
            .into_iter()
            .map(|(ids, reply)| (ids.iter().map(|id| image_digest(catalog, id)).collect(), reply))
            .collect();
        Self { table, calls: AtomicUsize::new(0) }
    }
}

impl Mllm for KeyedMllm {
    fn complete(&self, prompt: &PromptBundle) -> Result<Completion, InvokeError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let key: Vec<Digest32> = prompt.images.iter().map(|i| i.digest).collect();
        self.table
            .get(&key)
            .map(|text| Completion { text: text.clone(), attempts: 1 })
            .ok_or_else(|| InvokeError::Rejected { status: 404, body: "unscripted prompt".into() })
    }
}

/// Reply whose target description and every attribute thought are the
/// token `item <id>`.
pub fn aligned_reply(id: &str) -> String {
    let token = format!("item {id}");
    let attrs: serde_json::Map<String, serde_json::Value> = aesthete::attribute::AestheticAttribute::ALL
        .iter()
        .map(|a| (a.as_str().to_string(), serde_json::json!({"keyword": token, "reason": ""})))
        .collect();
    serde_json::json!({"identification": "aligned", "attributes": attrs, "target_description": token}).to_string()
}

/// Embeds `item <id>` as that item's image embedding.
pub fn aligned_embedder(catalog: &Catalog) -> StaticEmbedder {
    let table = catalog
        .items()
        .iter()
        .enumerate()
        .map(|(i, it)| (format!("item {}", it.item_id), catalog.image_embedding(i).to_vec()))
        .collect();
    StaticEmbedder::new(table)
}

/// Engine whose model describes each question's ground-truth item and whose
/// embedder maps that description onto the item's image embedding.
pub fn aligned_engine(catalog: Arc<Catalog>, d: &aesthete::evaluation::Datasets) -> aesthete::pipeline::Engine {
    let mut entries = Vec::new();
    for q in &d.fitb {
        let ids = q.outfit_item_ids.iter().chain(&q.candidate_item_ids).cloned().collect();
        entries.push((ids, aligned_reply(&q.candidate_item_ids[q.answer_index])));
    }
    for q in &d.cir {
        entries.push((q.outfit_item_ids.clone(), aligned_reply(&q.ground_truth_item_id)));
    }
    let mllm = KeyedMllm::new(&catalog, entries);
    let embedder = aligned_embedder(&catalog);
    let cache = tempfile::tempdir().unwrap().keep();
    aesthete::pipeline::Engine::new(catalog, Arc::new(embedder), Some(Arc::new(mllm)), aesthete::reasoning::MllmConfig::default(), cache)
}
