#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::sync::Arc;
use std::thread;

use mqa_server::{Coordinator, SystemConfig};
use serde_json::{json, Value};

const COLORS: [(&str, [u8; 3]); 6] = [
    ("red", [220, 30, 30]),
    ("green", [30, 200, 40]),
    ("blue", [30, 40, 220]),
    ("yellow", [230, 220, 30]),
    ("purple", [140, 30, 160]),
    ("gray", [128, 128, 128]),
];
const THINGS: [&str; 5] = ["apple", "car", "shirt", "flower", "lamp"];

pub fn object_text(i: usize) -> String {
    format!("{} {} number {i}", COLORS[i % 6].0, THINGS[i % 5])
}

pub fn png(rgb: [u8; 3], shade: u8) -> Vec<u8> {
    let img = image::RgbImage::from_fn(8, 8, |x, y| {
        let t = ((x + y) as u8).wrapping_mul(shade);
        image::Rgb([rgb[0].saturating_add(t), rgb[1], rgb[2].saturating_sub(t)])
    });
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png).unwrap();
    out.into_inner()
}

/// `n` objects with an inline text and a PNG image each, plus a config
/// using the built-in encoders and the template answer.
pub fn toy_kb(dir: &Path, n: usize) -> SystemConfig {
    fs::create_dir_all(dir.join("img")).unwrap();
    let mut manifest = String::new();
    for i in 0..n {
        let file = format!("img/{i:03}.png");
        fs::write(dir.join(&file), png(COLORS[i % 6].1, (i % 7) as u8)).unwrap();
        let record = json!({
            "id": format!("item-{i:03}"),
            "modalities": {"text": {"inline": object_text(i)}, "image": {"path": file}}
        });
        manifest.push_str(&record.to_string());
        manifest.push('\n');
    }
    fs::write(dir.join("manifest.jsonl"), manifest).unwrap();
    config_from(json!({
        "knowledge_base": {
            "name": "toy",
            "manifest": dir.join("manifest.jsonl"),
            "modalities": [{"name": "text", "dimension": 64}, {"name": "image", "dimension": 48}]
        },
        "encoders": [
            {"modality": "text", "kind": "hash-ngram"},
            {"modality": "image", "kind": "color-hist"}
        ],
        "index": {"build": {"r": 8, "l_build": 16}},
        "retrieval": {"k": 5, "l": 20}
    }))
}

pub fn config_from(v: Value) -> SystemConfig {
    serde_json::from_value(v).unwrap()
}

pub fn configured(config: SystemConfig) -> Coordinator {
    let c = Coordinator::new();
    let m = c.configure(config).unwrap();
    assert!(m.all_done(), "{m:?}");
    c
}

pub struct Captured {
    pub body: Value,
    pub authorization: Option<String>,
}

/// A chat-completion stub. With `fail` every request gets a 500; otherwise
/// the reply content echoes the request's message contents joined by "\n".
pub fn llm_stub(fail: bool) -> (String, mpsc::Receiver<Captured>) {
    let server = tiny_http::Server::http("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", server.server_addr().to_ip().unwrap());
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for mut req in server.incoming_requests() {
            let mut raw = String::new();
            req.as_reader().read_to_string(&mut raw).unwrap();
            let body: Value = serde_json::from_str(&raw).unwrap_or(Value::Null);
            let authorization = req
                .headers()
                .iter()
                .find(|h| h.field.equiv("Authorization"))
                .map(|h| h.value.to_string());
            let response = if fail {
                tiny_http::Response::from_string("upstream exploded").with_status_code(500)
            } else {
                let echo = echo_of(&body);
                tiny_http::Response::from_string(
                    json!({"choices": [{"message": {"role": "assistant", "content": echo}}]}).to_string(),
                )
            };
            let _ = tx.send(Captured { body, authorization });
            let _ = req.respond(response);
        }
    });
    (url, rx)
}

pub fn echo_of(body: &Value) -> String {
    body["messages"]
        .as_array()
        .map(|m| m.iter().map(|m| m["content"].as_str().unwrap_or("")).collect::<Vec<_>>().join("\n"))
        .unwrap_or_default()
}

/// Serves the API on an ephemeral port for the rest of the process.
pub fn spawn_service() -> (String, Arc<Coordinator>) {
    let coordinator = Arc::new(Coordinator::new());
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    listener.set_nonblocking(true).unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    let c = coordinator.clone();
    thread::spawn(move || {
        tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()
            .unwrap()
            .block_on(async move {
                let listener = tokio::net::TcpListener::from_std(listener).unwrap();
                mqa_server::http::serve(listener, c).await.unwrap();
            })
    });
    (base, coordinator)
}

pub fn tempdir() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().to_path_buf();
    (dir, path)
}
