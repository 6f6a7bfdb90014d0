//! Schema and invariant checks for every file the pipeline reads or writes.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use lenspipe_core::benchgen::HistoryPhoto;
use lenspipe_core::config::PipelineConfig;
use lenspipe_core::index::CategoryCentroid;
use lenspipe_core::jsonl;
use lenspipe_core::model::{
    canonicalize_aspects, validate_example, BenchmarkExample, ExampleLimits, RankedResult, MAX_CAPTION_WORDS,
    NORM_TOLERANCE,
};
use lenspipe_core::profile::ProfileRecord;
use lenspipe_core::refine::TrainRecord;
use serde::de::DeserializeOwned;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileKind {
    Benchmark,
    Histories,
    Profiles,
    Results,
    Centroids,
    Config,
    Train,
}

impl std::str::FromStr for FileKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "benchmark" => Self::Benchmark,
            "histories" => Self::Histories,
            "profiles" => Self::Profiles,
            "results" => Self::Results,
            "centroids" => Self::Centroids,
            "config" => Self::Config,
            "train" => Self::Train,
            other => return Err(format!("unknown file kind {other:?}")),
        })
    }
}

/// Returns every violation found; an empty list means the file is valid.
pub fn validate_file(kind: FileKind, path: &Path, limits: ExampleLimits) -> Result<Vec<String>> {
    if kind == FileKind::Config {
        return Ok(match PipelineConfig::load(path).and_then(|c| c.validate()) {
            Ok(()) => vec![],
            Err(e) => vec![e.to_string()],
        });
    }
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut v = Violations::default();
    match kind {
        FileKind::Benchmark => check_benchmark(&text, limits, &mut v),
        FileKind::Histories => check_histories(&text, &mut v),
        FileKind::Profiles => check_profiles(&text, &mut v),
        FileKind::Results => check_results(&text, &mut v),
        FileKind::Centroids => check_centroids(&text, &mut v),
        FileKind::Train => check_train(&text, path.parent().unwrap_or(Path::new(".")), &mut v),
        FileKind::Config => unreachable!(),
    }
    Ok(v.0)
}

#[derive(Default)]
struct Violations(Vec<String>);

impl Violations {
    fn add(&mut self, line: usize, msg: impl std::fmt::Display) {
        self.0.push(format!("line {line}: {msg}"));
    }
}

fn records<T: DeserializeOwned>(text: &str, v: &mut Violations) -> Vec<(usize, T)> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match jsonl::from_line::<T>(line) {
            Ok(r) => out.push((i + 1, r)),
            Err(e) => v.add(i + 1, e),
        }
    }
    out
}

fn check_benchmark(text: &str, limits: ExampleLimits, v: &mut Violations) {
    let mut seen = HashSet::new();
    for (line, ex) in records::<BenchmarkExample>(text, v) {
        if !seen.insert(ex.query.query_id.clone()) {
            v.add(line, format!("duplicate query_id {}", ex.query.query_id));
        }
        for msg in validate_example(&ex, limits) {
            v.add(line, format!("{}: {msg}", ex.query.query_id));
        }
    }
}

fn check_histories(text: &str, v: &mut Violations) {
    let mut ids = HashSet::new();
    let mut orders: HashSet<(String, u64)> = HashSet::new();
    for (line, p) in records::<HistoryPhoto>(text, v) {
        if !ids.insert(p.image_id.clone()) {
            v.add(line, format!("duplicate image_id {}", p.image_id));
        }
        if !orders.insert((p.user_id.clone(), p.taken_order)) {
            v.add(line, format!("user {} repeats taken_order {}", p.user_id, p.taken_order));
        }
    }
}

fn check_profiles(text: &str, v: &mut Violations) {
    let mut ids: HashMap<String, HashSet<String>> = HashMap::new();
    for (line, r) in records::<ProfileRecord>(text, v) {
        if !ids.entry(r.user_id.clone()).or_default().insert(r.image_id.clone()) {
            v.add(line, format!("user {} repeats image {}", r.user_id, r.image_id));
        }
        if r.caption.split_whitespace().count() > MAX_CAPTION_WORDS {
            v.add(line, format!("caption over {MAX_CAPTION_WORDS} words"));
        }
        if canonicalize_aspects(&r.aspects) != r.aspects {
            v.add(line, "aspects are not canonical: lowercase, single-spaced, unique");
        }
        if r.embedding_ref.is_empty() {
            v.add(line, "empty embedding_ref");
        }
    }
}

fn check_results(text: &str, v: &mut Violations) {
    let mut seen = HashSet::new();
    for (line, r) in records::<RankedResult>(text, v) {
        if !seen.insert(r.query_id.clone()) {
            v.add(line, format!("duplicate query_id {}", r.query_id));
        }
        if r.scores.values().any(|s| !s.is_finite()) {
            v.add(line, "non-finite score");
        }
        let ranked: HashSet<&String> = r.ranking.iter().collect();
        if ranked.len() != r.ranking.len() || ranked.len() != r.scores.len() || !r.scores.keys().all(|k| ranked.contains(k))
        {
            v.add(line, "ranking is not a permutation of the scored candidates");
            continue;
        }
        let ordered = r.ranking.windows(2).all(|p| {
            let (a, b) = (r.scores[&p[0]], r.scores[&p[1]]);
            a > b || (a == b && p[0] < p[1])
        });
        if !ordered {
            v.add(line, "ranking does not follow descending score, ties by item_id");
        }
    }
}

fn check_centroids(text: &str, v: &mut Violations) {
    let mut seen = HashSet::new();
    for (line, c) in records::<CategoryCentroid>(text, v) {
        if !seen.insert(c.category.clone()) {
            v.add(line, format!("duplicate category {}", c.category));
        }
        if (c.centroid.norm() - 1.0).abs() > NORM_TOLERANCE {
            v.add(line, format!("centroid norm {} is not 1", c.centroid.norm()));
        }
        if c.sample_size == 0 {
            v.add(line, "sample_size is 0");
        }
    }
}

fn check_train(text: &str, dir: &Path, v: &mut Violations) {
    for (line, r) in records::<TrainRecord>(text, v) {
        let grid = match &r {
            TrainRecord::GridCaption(g) => {
                if g.target_text.trim().is_empty() {
                    v.add(line, "empty caption target");
                }
                &g.grid_png_path
            }
            TrainRecord::Joint(j) => {
                if !(j.lambda.is_finite() && j.lambda > 0.0) {
                    v.add(line, format!("lambda {} is not positive", j.lambda));
                }
                if !j.match_part.labels.contains(&1) {
                    v.add(line, "no positive label");
                }
                if j.match_part.labels.iter().any(|&l| l > 1) {
                    v.add(line, "labels must be 0 or 1");
                }
                if j.aspect.target_words.is_empty() {
                    v.add(line, "empty aspect target");
                }
                &j.match_part.grid_png_path
            }
        };
        if !dir.join(grid).is_file() {
            v.add(line, format!("missing grid {grid}"));
        }
    }
}
