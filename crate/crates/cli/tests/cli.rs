mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use lenspipe_core::config::BackendKind;
use lenspipe_core::jsonl;
use lenspipe_core::model::RankedResult;
use lenspipe_core::profile::ReplayRecord;
use lenspipe_core::store::EmbeddingStore;
use lenspipe_core::wire::AugmentTask;
use lenspipe_mock_scorer::{Faults, MockServer};

fn lenspipe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lenspipe"))
        .args(args)
        .env("RUST_LOG", "error")
        .env_remove("LENSPIPE_BACKEND_URL")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = lenspipe(args);
    assert!(
        out.status.success(),
        "lenspipe {args:?} failed:\n{}{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn golden_prompt_is_byte_exact() {
    let dir = tempfile::tempdir().unwrap();
    let prompts = common::golden_prompts(dir.path(), BackendKind::Oracle, None);
    assert_eq!(prompts, vec![common::golden_expected()]);
    let results: Vec<RankedResult> = jsonl::read(&dir.path().join("results.jsonl")).unwrap();
    // Two shared aspect tokens each ("latte art", "natural light"); the tie goes to the smaller id.
    assert_eq!(results[0].scores["grind"], 2.0);
    assert_eq!(results[0].scores["sunroom"], 2.0);
    assert_eq!(results[0].ranking, ["grind", "sunroom", "nightowl"]);
}

#[test]
fn synthetic_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = ok(&["synth", "--out", s(d), "--users", "10", "--examples", "60", "--history-len", "40"]);
    assert!(out.contains("60 examples"));
    ok(&["validate", "--kind", "benchmark", s(&d.join("benchmark.jsonl")), "--gtc-min", "1"]);
    ok(&["validate", "--kind", "profiles", s(&d.join("profiles.jsonl"))]);

    let centroids = d.join("centroids.jsonl");
    ok(&[
        "build-centroids",
        "--benchmark",
        s(&d.join("benchmark.jsonl")),
        "--embeddings",
        s(&d.join("embeddings.lensemb")),
        "--pool",
        s(&d.join("pool.jsonl")),
        "--out",
        s(&centroids),
        "--n",
        "500",
    ]);
    ok(&["validate", "--kind", "centroids", s(&centroids)]);

    let results = d.join("run/results.jsonl");
    let recommend = |backend: &str| {
        ok(&[
            "recommend",
            "--benchmark",
            s(&d.join("benchmark.jsonl")),
            "--profiles",
            s(&d.join("profiles.jsonl")),
            "--embeddings",
            s(&d.join("embeddings.lensemb")),
            "--centroids",
            s(&centroids),
            "--out",
            s(&results),
            "--backend",
            backend,
        ])
    };
    let first = recommend("oracle");
    assert!(first.contains("computed 60"), "{first}");
    ok(&["validate", "--kind", "results", s(&results)]);

    let report = d.join("report");
    let summary = ok(&[
        "eval",
        "--results",
        s(&results),
        "--benchmark",
        s(&d.join("benchmark.jsonl")),
        "--out",
        s(&report),
    ]);
    let summary: serde_json::Value = serde_json::from_str(&summary).unwrap();
    assert_eq!(summary["n"], 60);
    assert!(summary["mrr"].as_f64().unwrap() > 50.0);
    for f in ["summary.json", "breakdown_category.csv", "breakdown_long.csv"] {
        assert!(report.join(f).is_file(), "{f}");
    }

    // Finished results are reused on a rerun.
    let again = recommend("oracle");
    assert!(again.contains("computed 0 resumed 60"), "{again}");
}

#[test]
fn eval_reports_misaligned_ids() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--out", s(d), "--users", "2", "--examples", "4", "--history-len", "10"]);
    let results = d.join("results.jsonl");
    let r = RankedResult {
        query_id: "nobody-1".into(),
        scores: [("x".to_string(), 1.0)].into(),
        ranking: vec!["x".into()],
    };
    jsonl::write(&results, [&r]).unwrap();
    let out = lenspipe(&["eval", "--results", s(&results), "--benchmark", s(&d.join("benchmark.jsonl"))]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("4 missing") && err.contains("nobody-1"), "{err}");
}

#[test]
fn build_bench_from_trace() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let trace = common::core_fixture("trace");
    let expected: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(trace.join("expected.json")).unwrap()).unwrap();
    let config = d.join("lenspipe.toml");
    let bench = toml_table(&expected["config"]);
    fs::write(&config, format!("dataset = \"custom\"\n\n[bench]\n{bench}")).unwrap();

    let stats = ok(&[
        "build-bench",
        "--reviews",
        s(&trace.join("reviews.jsonl")),
        "--businesses",
        s(&trace.join("businesses.jsonl")),
        "--out",
        s(&d.join("bench")),
        "--config",
        s(&config),
        "--split",
        "category:cafe",
    ]);
    let stats: serde_json::Value = serde_json::from_str(&stats).unwrap();
    assert_eq!(stats["n_examples"], 1);
    ok(&["validate", "--kind", "benchmark", s(&d.join("bench/benchmark.jsonl")), "--fc-min", "3"]);
    ok(&["validate", "--kind", "histories", s(&d.join("bench/histories.jsonl"))]);
    assert_eq!(fs::read_to_string(d.join("bench/test.jsonl")).unwrap().lines().count(), 1);
    assert_eq!(fs::read_to_string(d.join("bench/train.jsonl")).unwrap(), "");

    // Thresholds nobody meets.
    fs::write(&config, format!("dataset = \"custom\"\n\n[bench]\n{bench}").replace("min_history = 3", "min_history = 500"))
        .unwrap();
    let out = lenspipe(&[
        "build-bench",
        "--reviews",
        s(&trace.join("reviews.jsonl")),
        "--businesses",
        s(&trace.join("businesses.jsonl")),
        "--out",
        s(&d.join("none")),
        "--config",
        s(&config),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("0 examples"));
}

fn toml_table(v: &serde_json::Value) -> String {
    v.as_object()
        .unwrap()
        .iter()
        .map(|(k, v)| format!("{k} = {v}\n"))
        .collect()
}

/// Benchmark histories from the trace fixture plus a raw store for them.
fn trace_histories(d: &Path) -> Vec<lenspipe_core::benchgen::HistoryPhoto> {
    let trace = common::core_fixture("trace");
    let cfg = d.join("gen.toml");
    let expected: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(trace.join("expected.json")).unwrap()).unwrap();
    fs::write(&cfg, format!("dataset = \"custom\"\n\n[bench]\n{}", toml_table(&expected["config"]))).unwrap();
    ok(&[
        "build-bench",
        "--reviews",
        s(&trace.join("reviews.jsonl")),
        "--businesses",
        s(&trace.join("businesses.jsonl")),
        "--out",
        s(&d.join("bench")),
        "--config",
        s(&cfg),
    ]);
    let photos: Vec<lenspipe_core::benchgen::HistoryPhoto> = jsonl::read(&d.join("bench/histories.jsonl")).unwrap();
    let mut store = EmbeddingStore::new(4);
    for (i, p) in photos.iter().enumerate() {
        store.push(p.image_id.clone(), vec![1.0 + i as f32, 2.0, 0.5, -1.0]).unwrap();
    }
    store.save(&d.join("raw.lensemb")).unwrap();
    photos
}

#[test]
fn build_profiles_from_replay() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let photos = trace_histories(d);
    let mut replay = Vec::new();
    for p in &photos {
        replay.push(ReplayRecord {
            image_ref: p.pixels_ref.clone(),
            task: AugmentTask::Caption,
            output_text: format!("A cup at {}", p.pixels_ref),
        });
        replay.push(ReplayRecord {
            image_ref: p.pixels_ref.clone(),
            task: AugmentTask::Aspects,
            output_text: "Latte Art, cozy seating\n- latte art".into(),
        });
    }
    let lines: Vec<String> = replay.iter().map(|r| serde_json::to_string(r).unwrap()).collect();
    fs::write(d.join("replay.jsonl"), lines.join("\n")).unwrap();

    let report = ok(&[
        "build-profiles",
        "--histories",
        s(&d.join("bench/histories.jsonl")),
        "--embeddings",
        s(&d.join("raw.lensemb")),
        "--replay",
        s(&d.join("replay.jsonl")),
        "--out",
        s(&d.join("profiles")),
    ]);
    let report: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert_eq!(report["images"], photos.len());
    assert_eq!(report["degraded"], 0);
    ok(&["validate", "--kind", "profiles", s(&d.join("profiles/profiles.jsonl"))]);
    let records: Vec<lenspipe_core::profile::ProfileRecord> = jsonl::read(&d.join("profiles/profiles.jsonl")).unwrap();
    assert_eq!(records[0].aspects, ["latte art", "cozy seating"]);
    let store = EmbeddingStore::load(&d.join("profiles/embeddings.lensemb")).unwrap();
    for (_, v) in &store.records {
        let norm: f64 = v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
    }
}

#[test]
fn build_profiles_through_mock_augmenter() {
    let server = MockServer::start(Faults::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let photos = trace_histories(d);
    let config = d.join("remote.toml");
    fs::write(&config, format!("[backend]\nkind = \"remote\"\nendpoint = \"{}\"\n", server.url())).unwrap();
    ok(&[
        "build-profiles",
        "--histories",
        s(&d.join("bench/histories.jsonl")),
        "--embeddings",
        s(&d.join("raw.lensemb")),
        "--config",
        s(&config),
        "--out",
        s(&d.join("profiles")),
    ]);
    let records: Vec<lenspipe_core::profile::ProfileRecord> = jsonl::read(&d.join("profiles/profiles.jsonl")).unwrap();
    assert_eq!(records.len(), photos.len());
    assert!(records.iter().all(|r| !r.caption.is_empty() && !r.aspects.is_empty()));
    assert_eq!(server.counters().augment.load(std::sync::atomic::Ordering::SeqCst), 2 * photos.len());
    assert!(server.rejections().is_empty());
}

#[test]
fn unreachable_backend_fails_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--out", s(d), "--users", "2", "--examples", "5", "--history-len", "10", "--images"]);
    ok(&[
        "build-centroids",
        "--benchmark",
        s(&d.join("benchmark.jsonl")),
        "--embeddings",
        s(&d.join("embeddings.lensemb")),
        "--pool",
        s(&d.join("pool.jsonl")),
        "--out",
        s(&d.join("centroids.jsonl")),
    ]);
    // Bind then drop a listener so the port is very likely closed.
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let config = d.join("c.toml");
    fs::write(&config, "[backend]\nkind = \"remote\"\ntimeout_ms = 500\nretries = 1\n").unwrap();
    let out = lenspipe(&[
        "recommend",
        "--benchmark",
        s(&d.join("benchmark.jsonl")),
        "--profiles",
        s(&d.join("profiles.jsonl")),
        "--embeddings",
        s(&d.join("embeddings.lensemb")),
        "--centroids",
        s(&d.join("centroids.jsonl")),
        "--out",
        s(&d.join("results.jsonl")),
        "--config",
        s(&config),
        "--endpoint",
        &format!("http://127.0.0.1:{port}"),
        "--images-root",
        s(&d.join("images")),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("failed 5"));
    // Failed queries stay pending for the next run.
    assert!(lenspipe_core::pipeline::progress_path(&d.join("results.jsonl")).exists());
}

#[test]
fn export_train_writes_valid_records() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--out", s(d), "--users", "3", "--examples", "6", "--history-len", "30", "--images"]);
    ok(&[
        "build-centroids",
        "--benchmark",
        s(&d.join("benchmark.jsonl")),
        "--embeddings",
        s(&d.join("embeddings.lensemb")),
        "--pool",
        s(&d.join("pool.jsonl")),
        "--out",
        s(&d.join("centroids.jsonl")),
    ]);
    let docci = d.join("docci");
    fs::create_dir_all(docci.join("images")).unwrap();
    let mut lines = Vec::new();
    for i in 0..70 {
        let file = format!("img{i:03}.jpg");
        image::RgbImage::from_pixel(20, 16, image::Rgb([i as u8 * 3, 90, 30])).save(docci.join("images").join(&file)).unwrap();
        lines.push(format!(
            r#"{{"example_id":"dc{i}","split":"train","image_file":"{file}","description":"Object number {i} on a table."}}"#
        ));
    }
    fs::write(docci.join("docci_descriptions.jsonlines"), lines.join("\n")).unwrap();

    let out_dir = d.join("train");
    let summary = ok(&[
        "export-train",
        "--benchmark",
        s(&d.join("benchmark.jsonl")),
        "--profiles",
        s(&d.join("profiles.jsonl")),
        "--embeddings",
        s(&d.join("embeddings.lensemb")),
        "--centroids",
        s(&d.join("centroids.jsonl")),
        "--docci",
        s(&docci),
        "--images-root",
        s(&d.join("images")),
        "--out",
        s(&out_dir),
    ]);
    assert!(summary.contains("grid-caption 1 joint 6 skipped 0"), "{summary}");
    ok(&["validate", "--kind", "train", s(&out_dir.join("train.jsonl"))]);
    let text = fs::read_to_string(out_dir.join("train.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert!(first["target_text"].as_str().unwrap().starts_with("Image 1: Object number"));
    let joint: serde_json::Value = serde_json::from_str(text.lines().nth(1).unwrap()).unwrap();
    assert_eq!(joint["lambda"], 2.0);
    assert_eq!(joint["match"]["labels"].as_array().unwrap().len(), 20);
}

#[test]
fn validate_flags_bad_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let config = d.join("bad.toml");
    fs::write(&config, "w = 10\n").unwrap();
    let out = lenspipe(&["validate", "--kind", "config", s(&config)]);
    assert!(!out.status.success());
    fs::write(&config, "[backend]\nkind = \"remote\"\n").unwrap();
    assert!(!lenspipe(&["validate", "--kind", "config", s(&config)]).status.success());
    fs::write(&config, "d = 7\nh = 980\nw = 49\n").unwrap();
    ok(&["validate", "--kind", "config", s(&config)]);

    ok(&["synth", "--out", s(d), "--users", "2", "--examples", "4", "--history-len", "10"]);
    // Default limits demand two ground truths; the synthetic set has one.
    let out = lenspipe(&["validate", "--kind", "benchmark", s(&d.join("benchmark.jsonl"))]);
    assert!(!out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().count(), 4);
}
