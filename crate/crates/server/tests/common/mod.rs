#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, OnceLock};
use std::thread;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use flowquery_bridge::{ChatClient, ChatConfig, TagMode};
use flowquery_core::corpus::{caption_samples, toy_corpus, LabeledSegments};
use flowquery_core::descriptor::describe_all;
use flowquery_core::encoder::{train_dae, DaeModel, DaeTrainConfig};
use flowquery_core::matcher::{build_index, train_matcher, HashedEmbedder, MatchIndex, MatcherConfig, MatcherModel};
use flowquery_server::{router, AppState, Dataset};
use tower::ServiceExt;

pub struct Fixture {
    pub corpus: LabeledSegments,
    pub encoder: DaeModel,
    pub matcher: MatcherModel,
    pub index: MatchIndex,
}

/// A small toy corpus with a briefly trained encoder and matcher; enough
/// to exercise the service contract.
pub fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let corpus = toy_corpus(12, 5).unwrap();
        let dms = describe_all(&corpus.segments).unwrap();
        let cfg = DaeTrainConfig { epochs: 5, hidden: vec![32], latent_dim: 16, ..Default::default() };
        let (encoder, _) = train_dae(&dms, &cfg).unwrap();
        let z = encoder.encode_all(&dms).unwrap();
        let latents: Vec<Vec<f64>> = z.rows().into_iter().map(|r| r.to_vec()).collect();
        let rows: Vec<usize> = (0..corpus.len()).collect();
        let samples = caption_samples(&corpus, &rows, 4, 4, 5).unwrap();
        let mcfg = MatcherConfig { epochs: 5, common_dim: 32, ..Default::default() };
        let (matcher, _) = train_matcher(&samples, &latents, &HashedEmbedder::default(), &mcfg).unwrap();
        let index = build_index(&corpus.segments, &encoder, &matcher).unwrap();
        Fixture { corpus, encoder, matcher, index }
    })
}

pub fn state_with(index: Option<MatchIndex>, chat: ChatConfig) -> Arc<AppState> {
    let f = fixture();
    let data = Dataset::new(None, Vec::new(), f.corpus.segments.clone(), index).unwrap();
    let chat = ChatClient::new(chat).unwrap();
    Arc::new(AppState::new(data, Arc::new(HashedEmbedder::default()), chat, TagMode::Lexicon).unwrap())
}

pub fn app(state: Arc<AppState>) -> Router {
    router(state, 16 * 1024)
}

pub fn toy_app() -> Router {
    app(state_with(Some(fixture().index.clone()), ChatConfig::default()))
}

pub async fn call(app: &Router, method: &str, uri: &str, body: Option<String>) -> (StatusCode, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    if body.is_some() {
        req = req.header("content-type", "application/json");
    }
    let req = req.body(body.map(Body::from).unwrap_or_else(Body::empty)).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    (status, bytes.to_vec())
}

pub async fn call_json(app: &Router, method: &str, uri: &str, body: Option<serde_json::Value>) -> (StatusCode, serde_json::Value) {
    let (s, b) = call(app, method, uri, body.map(|v| v.to_string())).await;
    (s, serde_json::from_slice(&b).unwrap_or(serde_json::Value::Null))
}

/// Chat-completions stand-in that replies `reply(last user message)` after
/// `delay`.
pub fn mock_chat(delay: Duration, reply: fn(&str) -> String) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            thread::spawn(move || {
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 {
                        return;
                    }
                    let l = line.trim_end().to_ascii_lowercase();
                    if l.is_empty() {
                        break;
                    }
                    if let Some(v) = l.strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut body = vec![0u8; len];
                reader.read_exact(&mut body).unwrap();
                let req: serde_json::Value = serde_json::from_slice(&body).unwrap();
                let last = req["messages"].as_array().unwrap().last().unwrap()["content"].as_str().unwrap_or("").to_string();
                thread::sleep(delay);
                let text = serde_json::json!({ "choices": [{ "message": { "role": "assistant", "content": reply(&last) } }] })
                    .to_string();
                let resp = format!(
                    "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
                    text.len()
                );
                let _ = stream.write_all(resp.as_bytes());
            });
        }
    });
    url
}
