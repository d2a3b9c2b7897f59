//! Fixtures shared by the CLI tests and the acceptance suite.
#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;

use serde_json::{json, Value};

pub const BIN: &str = env!("CARGO_BIN_EXE_curate");

pub fn adapters_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/adapters")
}

pub fn curate(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("PF_CACHE_DIR")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().unwrap_or(-1)
}

/// Run and insist on exit 0, echoing stderr otherwise.
pub fn curate_ok(args: &[&str]) {
    let out = curate(args);
    assert_eq!(code(&out), 0, "curate {args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
}

pub fn write_lines(path: &Path, rows: &[Value]) {
    let mut f = std::fs::File::create(path).unwrap();
    for r in rows {
        writeln!(f, "{r}").unwrap();
    }
}

const OBJECTS: [&str; 6] = ["person", "bicycle", "dog", "umbrella", "bus", "bench"];
const COLORS: [&str; 5] = ["red", "blue", "green", "yellow", "white"];
const ANSWERS: [&str; 3] = ["one", "two", "three"];
const CLASSES: [&str; 4] = ["Eurofighter Typhoon", "Boeing 747", "Cessna 172", "Airbus A380"];

/// Raw source records per adapter; `n` records in total, split over five sources.
pub fn raw_fixture(n: usize) -> Vec<(&'static str, Vec<Value>)> {
    let per = n / 5;
    let coco = (0..per)
        .map(|i| {
            let a = OBJECTS[i % 6];
            let b = OBJECTS[(i + 2) % 6];
            json!({
                "image_id": 1000 + i,
                "file": format!("coco/{i:05}.jpg"),
                "width": 640,
                "height": 480,
                "captions": [
                    format!("A {} {a} next to a {b}.", COLORS[i % 5]),
                    format!("There is a {a} and a {b} in scene {i}."),
                ],
                "boxes": [
                    {"label": a, "bbox": [10 + i % 50, 20, 200, 300]},
                    {"label": b, "bbox": [300, 40 + i % 30, 620, 470]}
                ]
            })
        })
        .collect();
    let aokvqa = (0..per)
        .map(|i| {
            json!({
                "question_id": format!("ok{i}"),
                "image": format!("aok/{i}.jpg"),
                "width": 500,
                "height": 375,
                "question": format!("What is the {} object used for in picture {i}?", COLORS[i % 5]),
                "answer": "carrying things",
                "rationale": format!("The {} has a handle and straps.", OBJECTS[i % 6])
            })
        })
        .collect();
    let vqa = (0..per)
        .map(|i| {
            json!({
                "question_id": 50_000 + i,
                "image": format!("vqa/{i}.jpg"),
                "width": 640,
                "height": 427,
                "question": format!("How many {}s are there in photo {i}?", OBJECTS[i % 6]),
                "answer": ANSWERS[i % 3]
            })
        })
        .collect();
    let elevater = (0..per)
        .map(|i| {
            json!({
                "id": format!("ev{i}"),
                "image": format!("ev/{i}.png"),
                "width": 224,
                "height": 224,
                "class": CLASSES[i % 4],
                "knowledge": if i % 2 == 0 { Value::from(format!("It is an aircraft, entry {i}.")) } else { Value::Null }
            })
        })
        .collect();
    let text = (0..n - 4 * per)
        .map(|i| {
            json!({
                "id": format!("oa{i}"),
                "prompt": format!("Give me a tip about topic number {i}."),
                "response": format!("Here is a tip for topic {i}: start small, stay consistent and review your progress every week.")
            })
        })
        .collect();
    vec![("coco", coco), ("aokvqa", aokvqa), ("vqa_v2", vqa), ("elevater", elevater), ("text_only", text)]
}

pub struct GenerateStub {
    pub url: String,
    pub calls: Arc<AtomicUsize>,
}

/// A `/generate` service that politely expands the draft embedded in the prompt.
pub fn generate_stub() -> GenerateStub {
    let calls = Arc::new(AtomicUsize::new(0));
    let counter = calls.clone();
    let url = serve(move |path, body| {
        counter.fetch_add(1, Ordering::SeqCst);
        match serde_json::from_str::<Value>(body) {
            Ok(v) if path == "/generate" => {
                let prompt = v["prompt"].as_str().unwrap_or_default();
                let draft = prompt
                    .split_once("Draft response:\n")
                    .map(|(_, rest)| rest.split('\n').next().unwrap_or(rest))
                    .unwrap_or(prompt);
                (200, json!({ "text": format!("Certainly! {draft} I hope this helps.") }).to_string())
            }
            _ => (400, json!({"error": "bad request"}).to_string()),
        }
    });
    GenerateStub { url, calls }
}

/// Bare HTTP/1.1 over std: one thread per connection, one request per
/// connection. tiny_http stalled now and then under 8 concurrent clients.
pub fn serve<F>(handler: F) -> String
where
    F: Fn(&str, &str) -> (u16, String) + Send + Sync + 'static,
{
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let handler = Arc::new(handler);
    thread::spawn(move || {
        for stream in listener.incoming().flatten() {
            let handler = handler.clone();
            thread::spawn(move || {
                let _ = answer(stream, &*handler);
            });
        }
    });
    url
}

fn answer(stream: TcpStream, handler: &dyn Fn(&str, &str) -> (u16, String)) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    let path = line.split_whitespace().nth(1).unwrap_or("/").to_string();
    let mut len = 0usize;
    loop {
        let mut h = String::new();
        if reader.read_line(&mut h)? == 0 || h.trim().is_empty() {
            break;
        }
        if let Some((k, v)) = h.split_once(':') {
            if k.trim().eq_ignore_ascii_case("content-length") {
                len = v.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0; len];
    reader.read_exact(&mut body)?;
    let (status, reply) = handler(&path, &String::from_utf8_lossy(&body));
    let mut w = stream;
    write!(
        w,
        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
        reply.len()
    )?;
    w.flush()
}

/// A port nothing listens on.
pub fn dead_url() -> String {
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    format!("http://127.0.0.1:{port}")
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

