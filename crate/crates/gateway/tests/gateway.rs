use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use nlrl_gateway::*;

fn request(content: &str) -> ChatRequest {
    ChatRequest {
        model: "test-model".into(),
        temperature: 0.0,
        messages: vec![Message::system("you are a test"), Message::user(content)],
        response_format: ResponseFormat::Text,
        request_tag: "test".into(),
        max_tokens: None,
    }
}

fn ok_body(text: &str) -> String {
    serde_json::json!({"choices": [{"message": {"role": "assistant", "content": text}}]}).to_string()
}

fn fast_retry() -> RetryPolicy {
    RetryPolicy { max_attempts: 5, base_delay: Duration::from_millis(1), factor: 2.0 }
}

/// Replies from a fixed script of (status, body), counting calls.
struct Scripted {
    replies: Mutex<Vec<TransportReply>>,
    calls: Arc<AtomicUsize>,
}

impl Scripted {
    fn new(script: Vec<(u16, String)>) -> (Self, Arc<AtomicUsize>) {
        let calls = Arc::new(AtomicUsize::new(0));
        let mut replies: Vec<_> =
            script.into_iter().map(|(status, body)| TransportReply { status, body }).collect();
        replies.reverse();
        (Self { replies: Mutex::new(replies), calls: calls.clone() }, calls)
    }
}

impl ChatTransport for Scripted {
    fn send(&self, _req: &ChatRequest) -> Result<TransportReply, TransportError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.replies
            .lock()
            .unwrap()
            .pop()
            .ok_or_else(|| TransportError("script exhausted".into()))
    }
}

fn gateway(dir: &std::path::Path, mode: CacheMode, t: Option<Scripted>) -> Gateway {
    Gateway::open(
        CachePolicy { mode, cache_dir: dir.to_path_buf() },
        t.map(|t| Box::new(t) as Box<dyn ChatTransport>),
        fast_retry(),
    )
    .unwrap()
}

#[test]
fn identical_request_twice_hits_cache() {
    let dir = tempfile::tempdir().unwrap();
    let (t, calls) = Scripted::new(vec![(200, ok_body("first"))]);
    let gw = gateway(dir.path(), CacheMode::CacheFirst, Some(t));
    assert_eq!(gw.chat(&request("q")).unwrap(), "first");
    let mut tagged = request("q");
    tagged.request_tag = "elsewhere".into();
    assert_eq!(gw.chat(&tagged).unwrap(), "first");
    assert_eq!(calls.load(Ordering::SeqCst), 1);
}

#[test]
fn replay_only_with_empty_cache_misses() {
    let dir = tempfile::tempdir().unwrap();
    let gw = gateway(dir.path(), CacheMode::ReplayOnly, None);
    match gw.chat(&request("q")) {
        Err(GatewayError::ReplayMiss { prompt_hash }) => {
            assert_eq!(prompt_hash, request("q").prompt_hash())
        }
        other => panic!("expected ReplayMiss, got {other:?}"),
    }
}

#[test]
fn rate_limited_once_then_success_records_attempt_two() {
    let dir = tempfile::tempdir().unwrap();
    let (t, calls) = Scripted::new(vec![(429, "slow down".into()), (200, ok_body("fine"))]);
    let gw = gateway(dir.path(), CacheMode::CacheFirst, Some(t));
    assert_eq!(gw.chat(&request("q")).unwrap(), "fine");
    assert_eq!(calls.load(Ordering::SeqCst), 2);
    let loaded = load_transcripts(dir.path(), LoadMode::Strict).unwrap();
    assert_eq!(loaded.entries.len(), 1);
    assert_eq!(loaded.entries[0].attempt, 2);
    assert!(loaded.entries[0].hash_is_consistent());
}

#[test]
fn exhausted_retries_report_last_status() {
    let dir = tempfile::tempdir().unwrap();
    let script = (0..5).map(|_| (503, "down".to_string())).collect();
    let (t, calls) = Scripted::new(script);
    let gw = gateway(dir.path(), CacheMode::Live, Some(t));
    match gw.chat(&request("q")) {
        Err(GatewayError::UpstreamUnavailable { attempts, last_status, .. }) => {
            assert_eq!(attempts, 5);
            assert_eq!(last_status, Some(503));
        }
        other => panic!("expected UpstreamUnavailable, got {other:?}"),
    }
    assert_eq!(calls.load(Ordering::SeqCst), 5);
}

#[test]
fn client_errors_are_not_retried() {
    let dir = tempfile::tempdir().unwrap();
    let (t, calls) = Scripted::new(vec![(401, "bad key".into())]);
    let gw = gateway(dir.path(), CacheMode::Live, Some(t));
    assert!(matches!(gw.chat(&request("q")), Err(GatewayError::UpstreamRejected { status: 401, .. })));
    assert_eq!(calls.load(Ordering::SeqCst), 1);
}

#[test]
fn replay_after_recording_needs_no_transport() {
    let dir = tempfile::tempdir().unwrap();
    {
        let (t, _) = Scripted::new(vec![(200, ok_body("a")), (200, ok_body("b"))]);
        let gw = gateway(dir.path(), CacheMode::CacheFirst, Some(t));
        gw.chat(&request("one")).unwrap();
        gw.chat(&request("two")).unwrap();
    }
    let before = std::fs::read(dir.path().join(TRANSCRIPT_FILE)).unwrap();
    let gw = gateway(dir.path(), CacheMode::ReplayOnly, None);
    assert_eq!(gw.cached_entries(), 2);
    assert_eq!(gw.chat(&request("two")).unwrap(), "b");
    assert_eq!(gw.chat(&request("one")).unwrap(), "a");
    // replay never rewrites the store
    assert_eq!(before, std::fs::read(dir.path().join(TRANSCRIPT_FILE)).unwrap());
}

#[test]
fn session_log_records_hits() {
    let dir = tempfile::tempdir().unwrap();
    let (t, _) = Scripted::new(vec![(200, ok_body("a"))]);
    let session = dir.path().join("run").join(TRANSCRIPT_FILE);
    let gw = gateway(dir.path(), CacheMode::CacheFirst, Some(t)).with_session_log(&session).unwrap();
    gw.chat(&request("one")).unwrap();
    gw.chat(&request("one")).unwrap();
    let loaded = load_transcript_file(&session, LoadMode::Strict).unwrap();
    assert_eq!(loaded.entries.len(), 2);
}

/// Minimal HTTP/1.1 server answering each connection from a script.
fn serve(script: Vec<(u16, String)>) -> (String, std::thread::JoinHandle<Vec<String>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let handle = std::thread::spawn(move || {
        let mut bodies = Vec::new();
        for (status, body) in script {
            let (mut stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut content_length = 0usize;
            let mut first = String::new();
            reader.read_line(&mut first).unwrap();
            assert!(first.starts_with("POST /v1/chat/completions"), "{first}");
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let lower = line.to_ascii_lowercase();
                if let Some(v) = lower.strip_prefix("content-length:") {
                    content_length = v.trim().parse().unwrap();
                }
                if line == "\r\n" {
                    break;
                }
            }
            let mut buf = vec![0u8; content_length];
            reader.read_exact(&mut buf).unwrap();
            bodies.push(String::from_utf8(buf).unwrap());
            let reply = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
            stream.write_all(reply.as_bytes()).unwrap();
        }
        bodies
    });
    (format!("http://{addr}/v1"), handle)
}

#[test]
fn http_transport_speaks_chat_completions() {
    let (base, server) = serve(vec![(429, "{}".into()), (200, ok_body("over the wire"))]);
    let dir = tempfile::tempdir().unwrap();
    let transport =
        HttpTransport::new(base, Some("sk-test".into()), None, Duration::from_secs(5)).unwrap();
    let gw = Gateway::open(
        CachePolicy { mode: CacheMode::CacheFirst, cache_dir: dir.path().to_path_buf() },
        Some(Box::new(transport)),
        fast_retry(),
    )
    .unwrap();
    let mut req = request("hello");
    req.response_format = ResponseFormat::JsonObject;
    assert_eq!(gw.chat(&req).unwrap(), "over the wire");
    let bodies = server.join().unwrap();
    assert_eq!(bodies.len(), 2);
    let body: serde_json::Value = serde_json::from_str(&bodies[1]).unwrap();
    assert_eq!(body["model"], "test-model");
    assert_eq!(body["messages"][0]["role"], "system");
    assert_eq!(body["messages"][1]["content"], "hello");
    assert_eq!(body["response_format"]["type"], "json_object");
    let loaded = load_transcripts(dir.path(), LoadMode::Strict).unwrap();
    assert_eq!(loaded.entries[0].attempt, 2);
}
