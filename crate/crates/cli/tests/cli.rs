mod common;

use std::path::Path;

use serde_json::{json, Value};

use common::{curate, curate_ok, code, dead_url, generate_stub, raw_fixture, s, write_lines};

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn lines(p: &Path) -> Vec<Value> {
    std::fs::read_to_string(p).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

/// Convert the fixture's multimodal sources into one corpus file.
fn multimodal_corpus(dir: &Path, n: usize) -> std::path::PathBuf {
    let adapters = common::adapters_dir();
    let mut all = String::new();
    for (name, rows) in raw_fixture(n) {
        if name == "text_only" {
            continue;
        }
        let raw = dir.join(format!("{name}.raw.jsonl"));
        let out = dir.join(format!("{name}.jsonl"));
        write_lines(&raw, &rows);
        curate_ok(&["convert", "--adapter", name, "--adapters", s(&adapters), "--input", s(&raw), "--output", s(&out)]);
        all.push_str(&std::fs::read_to_string(&out).unwrap());
    }
    let path = dir.join("mm.jsonl");
    std::fs::write(&path, all).unwrap();
    path
}

#[test]
fn unknown_flag_exits_1_with_usage() {
    let out = curate(&["filter", "--no-such-flag"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn help_and_version_exit_0() {
    assert_eq!(code(&curate(&["--help"])), 0);
    assert_eq!(code(&curate(&["--version"])), 0);
    assert_eq!(code(&curate(&["eval", "--help"])), 0);
}

#[test]
fn missing_subcommand_exits_1() {
    assert_eq!(code(&curate(&[])), 1);
}

#[test]
fn unknown_config_key_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "[filters]\nsts_treshold = 0.5\n").unwrap();
    let out = curate(&["plan", "--config", s(&cfg), "--output", s(&dir.path().join("p.json"))]);
    assert_eq!(code(&out), 1);
}

#[test]
fn filter_with_stub_scorers_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let corpus = multimodal_corpus(d, 50);
    // turn raw annotations into "rewrites" so the change filter passes most of them
    let mut rows = lines(&corpus);
    for (i, r) in rows.iter_mut().enumerate() {
        if i % 7 != 0 {
            r["response"] = json!(format!("{} Hope this helps!", r["response"].as_str().unwrap()));
        }
    }
    let rewritten = d.join("rw.jsonl");
    write_lines(&rewritten, &rows);
    let table = d.join("t.json");
    std::fs::write(&table, json!({"defaults": {"sts": 0.9, "clipscore": 30.0, "nli": "neutral"}}).to_string()).unwrap();
    let cfg = d.join("c.toml");
    std::fs::write(&cfg, "[filters]\nmin_chars = 5\n").unwrap();
    let out = d.join("kept.jsonl");
    curate_ok(&["filter", "--config", s(&cfg), "--stub-scorers", s(&table), "--input", s(&rewritten), "--output", s(&out)]);

    let report = read_json(&d.join("kept.jsonl.report.json"));
    let verdicts = lines(&d.join("kept.jsonl.verdicts.jsonl"));
    assert_eq!(report["total_in"], 40);
    assert_eq!(verdicts.len(), 40);
    // expected: length (>= 5 chars) first, then change; the model filters all pass
    let (mut short, mut unchanged) = (0u64, 0u64);
    for r in &rows {
        let resp = r["response"].as_str().unwrap();
        if resp.chars().count() < 5 {
            short += 1;
        } else if Some(resp) == r["raw_annotation"].as_str() {
            unchanged += 1;
        }
    }
    assert!(short > 0 && unchanged > 0);
    assert_eq!(report["per_filter_rejections"]["length"], short);
    assert_eq!(report["per_filter_rejections"]["change"], unchanged);
    assert_eq!(report["total_kept"], 40 - unchanged - short);
    assert_eq!(lines(&out).len() as u64, 40 - unchanged - short);
    let manifest = read_json(&d.join("kept.jsonl.manifest.json"));
    assert_eq!(manifest["command"], "filter");
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn filter_without_scorers_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = multimodal_corpus(dir.path(), 10);
    let out = curate(&["filter", "--input", s(&corpus), "--output", s(&dir.path().join("o.jsonl"))]);
    assert_eq!(code(&out), 1);
}

#[test]
fn missing_stub_table_is_io() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = multimodal_corpus(dir.path(), 10);
    let out = curate(&[
        "filter", "--stub-scorers", "/nonexistent/t.json", "--input", s(&corpus), "--output", s(&dir.path().join("o.jsonl")),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn unreachable_endpoint_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let corpus = multimodal_corpus(d, 10);
    let cfg = d.join("c.toml");
    std::fs::write(&cfg, "[gateway]\nmax_retries = 1\nbackoff_base_ms = 1\n").unwrap();
    let out = curate(&[
        "rewrite", "--config", s(&cfg), "--input", s(&corpus), "--output", s(&d.join("o.jsonl")), "--endpoint", &dead_url(),
    ]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!d.join("o.jsonl").exists());
}

#[test]
fn cache_only_miss_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let corpus = multimodal_corpus(d, 10);
    let out = curate(&[
        "rewrite", "--cache-only", "--cache-dir", s(&d.join("cache")), "--input", s(&corpus), "--output", s(&d.join("o.jsonl")),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn rewrite_fills_cache_then_serves_from_it() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let corpus = multimodal_corpus(d, 25);
    let stub = generate_stub();
    let cache = d.join("cache");
    let a = d.join("a.jsonl");
    let b = d.join("b.jsonl");
    curate_ok(&["rewrite", "--input", s(&corpus), "--output", s(&a), "--endpoint", &stub.url, "--cache-dir", s(&cache)]);
    let calls = stub.calls.load(std::sync::atomic::Ordering::SeqCst);
    assert_eq!(calls, 20);
    let out = std::process::Command::new(common::BIN)
        .args(["rewrite", "--cache-only", "--input", s(&corpus), "--output", s(&b)])
        .env("PF_CACHE_DIR", &cache)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(stub.calls.load(std::sync::atomic::Ordering::SeqCst), calls);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let src = lines(&corpus);
    let rw = lines(&a);
    assert_eq!(rw.len(), src.len());
    for (x, y) in src.iter().zip(&rw) {
        assert_eq!(x["id"], y["id"]);
        assert_eq!(x["raw_annotation"], y["raw_annotation"], "raw annotation must stay put");
        assert!(y["response"].as_str().unwrap().starts_with("Certainly! "));
    }
    let manifest = read_json(&d.join("b.jsonl.manifest.json"));
    assert_eq!(manifest["counts"]["from_cache"], 20);
    assert_eq!(manifest["counts"]["endpoint_calls"], 0);
}

#[test]
fn malformed_generations_are_dropped_and_counted() {
    let url = common::serve(|_, _| (200, "{\"txt\": 1}".to_string()));
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let corpus = multimodal_corpus(d, 10);
    let out = d.join("o.jsonl");
    curate_ok(&["rewrite", "--input", s(&corpus), "--output", s(&out), "--endpoint", &url]);
    assert!(lines(&out).is_empty());
    let m = read_json(&d.join("o.jsonl.manifest.json"));
    assert_eq!(m["counts"]["dropped_malformed"], 8);
}

#[test]
fn convert_errors_are_validation_errors() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let adapters = common::adapters_dir();
    let raw = d.join("raw.jsonl");
    write_lines(&raw, &[json!({"question_id": 1, "image": "a.jpg", "width": 10, "height": 10, "answer": "x"})]);
    let out = curate(&["convert", "--adapter", "vqa_v2", "--adapters", s(&adapters), "--input", s(&raw), "--output", s(&d.join("o.jsonl"))]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("question"));
    let out = curate(&["convert", "--adapter", "nope", "--adapters", s(&adapters), "--input", s(&raw), "--output", s(&d.join("o.jsonl"))]);
    assert_eq!(code(&out), 1);
    let out = curate(&["convert", "--adapter", "vqa_v2", "--adapters", s(&adapters), "--input", s(&d.join("missing.jsonl")), "--output", s(&d.join("o.jsonl"))]);
    assert_eq!(code(&out), 2);
}

#[test]
fn every_default_adapter_output_validates() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let adapters = common::adapters_dir();
    for (name, rows) in raw_fixture(25) {
        let raw = d.join(format!("{name}.raw.jsonl"));
        let out = d.join(format!("{name}.jsonl"));
        write_lines(&raw, &rows);
        curate_ok(&["convert", "--adapter", name, "--adapters", s(&adapters), "--input", s(&raw), "--output", s(&out)]);
        curate_ok(&["validate", s(&out)]);
        let report = read_json(&d.join(format!("{name}.jsonl.validation.json")));
        assert_eq!(report["valid"], 5);
    }
}

#[test]
fn validate_reports_bad_lines() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let good = json!({"id": "a", "source_dataset": "x", "category": "text_only", "instruction": "hi", "response": "hello"});
    let mut dup = good.clone();
    dup["response"] = json!("again");
    let with_image = json!({"id": "b", "source_dataset": "x", "category": "text_only", "instruction": "hi", "response": "r",
        "images": [{"uri": "a.jpg", "width_px": 4, "height_px": 4}]});
    let corpus = d.join("c.jsonl");
    write_lines(&corpus, &[good, dup, with_image]);
    let report_path = d.join("r.json");
    let out = curate(&["validate", s(&corpus), "--report", s(&report_path)]);
    assert_eq!(code(&out), 1);
    let report = read_json(&report_path);
    assert_eq!(report["valid"], 1);
    let errors = report["errors"].as_array().unwrap();
    assert_eq!(errors[0]["line"], 2);
    assert!(errors[0]["message"].as_str().unwrap().contains("duplicate id"));
    assert_eq!(errors[1]["line"], 3);
}

#[test]
fn region_markers_are_rendered_on_convert() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let images = d.join("img");
    std::fs::create_dir_all(images.join("ref")).unwrap();
    image_png(&images.join("ref/1.png"), 100, 80);
    let raw = d.join("raw.jsonl");
    write_lines(&raw, &[json!({"ref_id": 1, "image": "ref/1.png", "width": 100, "height": 80,
        "sentence": "the man in the red shirt", "bbox": [10, 10, 50, 50]})]);
    let out = d.join("o.jsonl");
    let marks = d.join("marked");
    curate_ok(&[
        "convert", "--adapter", "refcocog", "--adapters", s(&common::adapters_dir()), "--input", s(&raw), "--output", s(&out),
        "--image-root", s(&images), "--marker-dir", s(&marks),
    ]);
    let sample = &lines(&out)[0];
    let uri = sample["images"][0]["uri"].as_str().unwrap();
    assert!(uri.ends_with("1.marked.png"));
    assert!(Path::new(uri).exists());
    assert_eq!(sample["images"][0]["regions"][0]["color"], "green");
}

/// A tiny mid-grey PNG, written without the image crate: stored (uncompressed) deflate blocks.
fn image_png(path: &Path, w: u32, h: u32) {
    fn crc(data: &[u8]) -> u32 {
        let mut c = 0xffff_ffffu32;
        for &b in data {
            c ^= b as u32;
            for _ in 0..8 {
                c = if c & 1 != 0 { 0xedb8_8320 ^ (c >> 1) } else { c >> 1 };
            }
        }
        !c
    }
    fn chunk(out: &mut Vec<u8>, kind: &[u8], data: &[u8]) {
        out.extend((data.len() as u32).to_be_bytes());
        let mut body = kind.to_vec();
        body.extend(data);
        out.extend(&body);
        out.extend(crc(&body).to_be_bytes());
    }
    let mut raw = Vec::new();
    for _ in 0..h {
        raw.push(0u8);
        raw.extend(std::iter::repeat(128u8).take(3 * w as usize));
    }
    let mut z = vec![0x78, 0x01];
    for (i, block) in raw.chunks(65_535).enumerate() {
        let last = (i + 1) * 65_535 >= raw.len();
        z.push(last as u8);
        z.extend((block.len() as u16).to_le_bytes());
        z.extend((!(block.len() as u16)).to_le_bytes());
        z.extend(block);
    }
    let (mut a, mut b) = (1u32, 0u32);
    for &x in &raw {
        a = (a + x as u32) % 65_521;
        b = (b + a) % 65_521;
    }
    z.extend(((b << 16) | a).to_be_bytes());
    let mut png = b"\x89PNG\r\n\x1a\n".to_vec();
    let mut ihdr = Vec::new();
    ihdr.extend(w.to_be_bytes());
    ihdr.extend(h.to_be_bytes());
    ihdr.extend([8, 2, 0, 0, 0]);
    chunk(&mut png, b"IHDR", &ihdr);
    chunk(&mut png, b"IDAT", &z);
    chunk(&mut png, b"IEND", &[]);
    std::fs::write(path, png).unwrap();
}

#[test]
fn plan_honours_config_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("c.toml");
    std::fs::write(&cfg, "[plan.stage1]\nlearning_rate = 2e-4\n").unwrap();
    let out = d.join("plan.json");
    curate_ok(&["plan", "--config", s(&cfg), "--output", s(&out)]);
    let plan = read_json(&out);
    assert_eq!(plan["stages"][0]["learning_rate"], 2e-4);
    assert_eq!(plan["stages"][2]["learning_rate"], 2e-5);
    std::fs::write(&cfg, "[plan.stage2]\nepochs = 0\n").unwrap();
    assert_eq!(code(&curate(&["plan", "--config", s(&cfg), "--output", s(&out)])), 1);
}

#[test]
fn eval_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let samples = d.join("s.jsonl");
    write_lines(&samples, &[
        json!({"id": "s1", "instruction": "What color is the bus?", "ground_truth": "red",
               "responses": {"a": "red", "b": "The bus is blue."}}),
        json!({"id": "s2", "instruction": "How many dogs?", "ground_truth": "two dogs",
               "responses": {"a": "two dogs", "b": "three"}}),
    ]);
    let rouge = d.join("rouge.jsonl");
    curate_ok(&["eval", "rouge", "--input", s(&samples), "--output", s(&rouge)]);
    let summary = read_json(&d.join("rouge.jsonl.summary.json"));
    assert_eq!(summary["a"]["mean"], 1.0);
    assert_eq!(summary["b"]["mean"], 0.0);

    let table = d.join("t.json");
    std::fs::write(&table, json!({
        "nli": [{"texts": ["\"red\" is the answer to the question: \"What color is the bus?\"",
                           "\"red\" is the answer to the question: \"What color is the bus?\""], "label": "entailment"}],
        "reward": [
            {"instruction": "What color is the bus?", "response": "red", "score": 1.0},
            {"instruction": "What color is the bus?", "response": "The bus is blue.", "score": 2.0},
            {"instruction": "How many dogs?", "response": "two dogs", "score": 3.0},
            {"instruction": "How many dogs?", "response": "three", "score": 0.0}
        ],
        "defaults": {"nli": "contradiction", "sts": 0.5}
    }).to_string()).unwrap();
    let qa = d.join("qa.jsonl");
    curate_ok(&["eval", "qa", "--stub-scorers", s(&table), "--input", s(&samples), "--output", s(&qa)]);
    let summary = read_json(&d.join("qa.jsonl.summary.json"));
    assert_eq!(summary["a"]["mean"], 0.5);
    assert_eq!(summary["b"]["mean"], 0.0);

    let wr = d.join("wr.json");
    curate_ok(&["eval", "winrate", "--stub-scorers", s(&table), "--input", s(&samples), "--output", s(&wr)]);
    let m = read_json(&wr);
    assert_eq!(m["model_ids"], json!(["a", "b"]));
    assert_eq!(m["rates"][0][1], 50.0);

    let sts = d.join("sts.jsonl");
    curate_ok(&["eval", "sts", "--stub-scorers", s(&table), "--input", s(&samples), "--output", s(&sts)]);
    assert_eq!(lines(&sts).len(), 4);

    let before = d.join("before.json");
    let after = d.join("after.json");
    std::fs::write(&before, json!({"model_id": "llm", "scores": {"mmlu": 40.0, "bbh": 30.0}}).to_string()).unwrap();
    std::fs::write(&after, json!({"model_id": "mllm", "scores": {"mmlu": 38.5, "bbh": 30.5}}).to_string()).unwrap();
    let tax = d.join("tax.json");
    curate_ok(&["eval", "tax", "--before", s(&before), "--after", s(&after), "--label", "multimodal tuning", "--output", s(&tax)]);
    assert_eq!(read_json(&tax)["tax"], 1.0);

    let human = d.join("h.jsonl");
    write_lines(&human, &[json!({"sample_id": "s1", "ranking": ["a", "b"]}), json!({"sample_id": "s2", "ranking": ["a", "b"]})]);
    let meta = d.join("meta.json");
    let rewards = d.join("wr.json.rewards.jsonl");
    curate_ok(&["eval", "meta", "--rewards", s(&rewards), "--human", s(&human), "--output", s(&meta)]);
    assert_eq!(read_json(&meta)["agreement"], 0.5);
}
