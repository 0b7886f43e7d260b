//! A minimal HTTP/1.1 server for exercising the clients offline.
#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use serde_json::Value;

pub struct MockServer {
    pub url: String,
    pub hits: Arc<AtomicUsize>,
}

pub enum Reply {
    Json(Value),
    Status(u16),
    Raw(String),
    Delay(Duration, Value),
}

/// Serves every request with `handler(request_json)` until the process exits.
pub fn serve<F>(handler: F) -> MockServer
where
    F: Fn(Value) -> Reply + Send + Sync + 'static,
{
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = hits.clone();
    let handler = Arc::new(handler);
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let handler = handler.clone();
            let counter = counter.clone();
            thread::spawn(move || {
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 {
                        return;
                    }
                    let l = line.trim_end();
                    if l.is_empty() {
                        break;
                    }
                    if let Some(v) = l.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut body = vec![0u8; len];
                reader.read_exact(&mut body).unwrap();
                counter.fetch_add(1, Ordering::SeqCst);
                let req: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
                let (status, text) = match handler(req) {
                    Reply::Json(v) => (200, v.to_string()),
                    Reply::Status(s) => (s, "{}".to_string()),
                    Reply::Raw(s) => (200, s),
                    Reply::Delay(d, v) => {
                        thread::sleep(d);
                        (200, v.to_string())
                    }
                };
                let resp = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
                    text.len()
                );
                let _ = stream.write_all(resp.as_bytes());
            });
        }
    });
    MockServer { url, hits }
}

pub fn completion(text: &str) -> Value {
    serde_json::json!({ "choices": [{ "message": { "role": "assistant", "content": text } }] })
}

/// Content of the last message, flattening multimodal parts to their text.
pub fn last_text(req: &Value) -> String {
    let content = &req["messages"].as_array().unwrap().last().unwrap()["content"];
    match content {
        Value::String(s) => s.clone(),
        Value::Array(parts) => parts.iter().filter_map(|p| p["text"].as_str()).collect::<Vec<_>>().join(" "),
        _ => String::new(),
    }
}
