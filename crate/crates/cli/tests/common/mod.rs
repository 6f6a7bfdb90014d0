#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use lenspipe_cli::run::{self, RecommendArgs};
use lenspipe_core::config::BackendKind;
use lenspipe_core::eval::{self, Dimension, EvalReport};
use lenspipe_core::grid::GridSpec;
use lenspipe_core::index::{build_centroid, CategoryCentroid};
use lenspipe_core::matcher::MatchTemplate;
use lenspipe_core::pipeline::{self, RecommendContext, RunSummary};
use lenspipe_core::scorer::Scorer;
use lenspipe_core::store::EmbeddingStore;
use lenspipe_core::synth::SynthBench;

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/golden")
}

pub fn core_fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(name)
}

/// Writes a LENSEMB1 store from a JSON object of id to vector.
pub fn store_from_json(json: &Path, out: &Path) {
    let map: BTreeMap<String, Vec<f32>> = serde_json::from_str(&fs::read_to_string(json).unwrap()).unwrap();
    let dim = map.values().next().unwrap().len() as u32;
    let mut store = EmbeddingStore::new(dim);
    for (id, v) in map {
        store.push(id, v).unwrap();
    }
    store.save(out).unwrap();
}

/// Runs `recommend` on the golden fixture and returns every cached prompt.
pub fn golden_prompts(dir: &Path, backend: BackendKind, endpoint: Option<String>) -> Vec<String> {
    let g = golden_dir();
    store_from_json(&g.join("embeddings.json"), &dir.join("embeddings.lensemb"));
    // Remote scorers consume the grid, so give every history photo pixels.
    for (i, name) in ["p1", "p2", "p3"].iter().enumerate() {
        let path = dir.join("images/ana").join(format!("{name}.jpg"));
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        image::RgbImage::from_pixel(40, 30, image::Rgb([60 * i as u8, 120, 200])).save(&path).unwrap();
    }
    let summary = run::recommend(&RecommendArgs {
        benchmark: g.join("benchmark.jsonl"),
        profiles: g.join("profiles.jsonl"),
        embeddings: dir.join("embeddings.lensemb"),
        centroids: g.join("centroids.jsonl"),
        out: dir.join("results.jsonl"),
        backend: Some(backend),
        endpoint,
        cache_dir: Some(dir.join("cache")),
        images_root: Some(dir.join("images")),
        ..RecommendArgs::default()
    })
    .unwrap();
    assert!(summary.failures.is_empty(), "{:?}", summary.failures);
    let mut prompts = Vec::new();
    collect_files(&dir.join("cache/prompts"), &mut prompts);
    prompts.iter().map(|p| fs::read_to_string(p).unwrap()).collect()
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) {
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            collect_files(&path, out);
        } else {
            out.push(path);
        }
    }
}

pub fn golden_expected() -> String {
    fs::read_to_string(golden_dir().join("prompt.txt")).unwrap()
}

/// Centroids from a synthetic benchmark's item pools.
pub fn synth_centroids(bench: &SynthBench, n: usize, seed: u64) -> HashMap<String, CategoryCentroid> {
    bench
        .item_pools
        .keys()
        .map(|cat| (cat.clone(), build_centroid(cat, &bench.pool(cat), n, seed).unwrap()))
        .collect()
}

/// Runs the in-process pipeline over a synthetic benchmark and evaluates it.
pub fn synth_eval(
    bench: &SynthBench,
    centroids: &HashMap<String, CategoryCentroid>,
    scorer: &dyn Scorer,
    spec: GridSpec,
    out: &Path,
) -> (RunSummary, EvalReport) {
    let histories = pipeline::histories_by_user(bench.histories.clone());
    let template = MatchTemplate::default();
    let ctx = RecommendContext {
        histories: &histories,
        centroids,
        scorer,
        template: &template,
        grid: spec,
        w: spec.capacity(),
        pixels: Some(&Swatches),
        always_render: false,
        cache: None,
    };
    let summary = pipeline::run_recommend(&bench.examples, &ctx, out, num_threads()).unwrap();
    let results = lenspipe_core::jsonl::read(out).unwrap();
    let report = eval::evaluate(&results, &bench.examples, &[Dimension::Category]).unwrap();
    (summary, report)
}

pub fn num_threads() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(4)
}

/// Grid with 16 cells; the synthetic histories hold 20 photos per category.
pub fn small_grid() -> GridSpec {
    GridSpec::new(4, 448).unwrap()
}

/// Flat 8×8 tiles colored from the image id; stands in for real photos.
pub struct Swatches;

impl lenspipe_core::pipeline::PixelSource for Swatches {
    fn source(&self, image: &lenspipe_core::model::ImageRecord) -> lenspipe_core::grid::GridSource {
        let h = pipeline::sha256_hex(image.image_id.as_bytes());
        let b = |i: usize| u8::from_str_radix(&h[2 * i..2 * i + 2], 16).unwrap();
        let px = image::Rgb([b(0), b(1), b(2)]);
        lenspipe_core::grid::GridSource::decoded(image.image_id.clone(), image::RgbImage::from_pixel(8, 8, px))
    }
}
