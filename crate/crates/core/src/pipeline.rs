//! Runtime recommendation: retrieve, gridify, prompt, score, rank.
//!
//! Runs are resumable. Finished results are appended to a side file as they
//! complete; a rerun skips every query id found there or in the final output,
//! and the final output is rewritten in benchmark order.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use image::RgbImage;
use rayon::prelude::*;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::grid::{gridify, GridError, GridSource, GridSpec, SourcePixels};
use crate::index::{retrieve_top_w, CategoryCentroid, IndexError};
use crate::jsonl::{self, JsonlError};
use crate::matcher::{build_match_prompt, rank, MatchError, MatchTemplate, QueryProfile};
use crate::model::{BenchmarkExample, ImageRecord, RankedResult, VisualHistory};
use crate::scorer::{ScoreError, Scorer};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("no profile for user {0}")]
    NoProfile(String),
    #[error("user {user_id} has no images before cutoff {cutoff}")]
    EmptyHistory { user_id: String, cutoff: u64 },
    #[error("no centroid for category {0}")]
    NoCentroid(String),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Match(#[from] MatchError),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error("cache {path}: {source}")]
    Cache { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error("worker pool: {0}")]
    Pool(String),
}

/// Resolves a history image to grid pixels.
pub trait PixelSource: Send + Sync {
    fn source(&self, image: &ImageRecord) -> GridSource;
}

/// Reads `pixels_ref` as a path relative to `root`.
#[derive(Debug, Clone)]
pub struct FilePixels {
    pub root: PathBuf,
}

impl PixelSource for FilePixels {
    fn source(&self, image: &ImageRecord) -> GridSource {
        GridSource {
            image_id: image.image_id.clone(),
            pixels: SourcePixels::File(self.root.join(&image.pixels_ref)),
        }
    }
}

/// In-memory pixels keyed by image id.
impl PixelSource for HashMap<String, RgbImage> {
    fn source(&self, image: &ImageRecord) -> GridSource {
        match self.get(&image.image_id) {
            Some(img) => GridSource::decoded(image.image_id.clone(), img.clone()),
            None => GridSource {
                image_id: image.image_id.clone(),
                pixels: SourcePixels::Encoded(Vec::new()),
            },
        }
    }
}

pub struct RecommendContext<'a> {
    pub histories: &'a HashMap<String, VisualHistory>,
    pub centroids: &'a HashMap<String, CategoryCentroid>,
    pub scorer: &'a dyn Scorer,
    pub template: &'a MatchTemplate,
    pub grid: GridSpec,
    pub w: usize,
    /// Needed whenever a grid is rendered.
    pub pixels: Option<&'a dyn PixelSource>,
    /// Render grids even when the scorer ignores them.
    pub always_render: bool,
    pub cache: Option<ArtifactCache>,
}

/// Content-addressed store for grids and prompts.
#[derive(Debug, Clone)]
pub struct ArtifactCache {
    pub root: PathBuf,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl ArtifactCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    fn path(&self, kind: &str, key: &str, ext: &str) -> PathBuf {
        self.root.join(kind).join(&key[..2]).join(format!("{key}.{ext}"))
    }

    fn get(&self, kind: &str, key: &str, ext: &str) -> Option<Vec<u8>> {
        fs::read(self.path(kind, key, ext)).ok()
    }

    fn put(&self, kind: &str, key: &str, ext: &str, bytes: &[u8]) -> Result<PathBuf, PipelineError> {
        let path = self.path(kind, key, ext);
        let err = |source| PipelineError::Cache {
            path: path.clone(),
            source,
        };
        fs::create_dir_all(path.parent().expect("cache paths have parents")).map_err(err)?;
        // Write-then-rename so concurrent writers never expose a torn file.
        let tmp = path.with_extension(format!("{ext}.{}.tmp", std::process::id()));
        fs::write(&tmp, bytes).map_err(err)?;
        fs::rename(&tmp, &path).map_err(err)?;
        Ok(path)
    }

    /// Stores a prompt under the hash of its text.
    pub fn put_prompt(&self, text: &str) -> Result<PathBuf, PipelineError> {
        self.put("prompts", &sha256_hex(text.as_bytes()), "txt", text.as_bytes())
    }
}

fn grid_key(spec: &GridSpec, images: &[&ImageRecord]) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(spec).expect("spec serializes"));
    for img in images {
        h.update(img.image_id.as_bytes());
        h.update([0]);
        h.update(img.pixels_ref.as_bytes());
        h.update([0]);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Everything produced for one query.
#[derive(Debug, Clone)]
pub struct Recommendation {
    pub result: RankedResult,
    pub retrieved: Vec<String>,
    pub prompt_text: String,
}

pub fn recommend_one(ex: &BenchmarkExample, ctx: &RecommendContext) -> Result<Recommendation, PipelineError> {
    let user = &ex.query.user_id;
    let full = ctx.histories.get(user).ok_or_else(|| PipelineError::NoProfile(user.clone()))?;
    let history = full.before(ex.history_cutoff).ok_or_else(|| PipelineError::EmptyHistory {
        user_id: user.clone(),
        cutoff: ex.history_cutoff,
    })?;
    let centroid = ctx
        .centroids
        .get(&ex.query.category)
        .ok_or_else(|| PipelineError::NoCentroid(ex.query.category.clone()))?;
    let retrieved = retrieve_top_w(&history, centroid, ctx.w)?;
    let profile = QueryProfile::from_retrieval(&history, &retrieved, ctx.grid.d)?;

    let grid_png = if ctx.scorer.needs_image() || ctx.always_render {
        let images: Vec<&ImageRecord> = retrieved
            .image_ids
            .iter()
            .map(|id| &history.get(id).expect("retrieved from this history").image)
            .collect();
        Some(render_grid(&images, ctx)?)
    } else {
        None
    };

    let prompt = build_match_prompt(&ex.query, &profile, &ex.candidates, ctx.template, grid_png)?;
    if let Some(cache) = &ctx.cache {
        cache.put_prompt(&prompt.text)?;
    }
    let scores = ctx.scorer.score(&prompt)?;
    let result = rank(&ex.query.query_id, &scores.0, &prompt.candidate_ids)?;
    Ok(Recommendation {
        result,
        retrieved: retrieved.image_ids,
        prompt_text: prompt.text,
    })
}

fn render_grid(images: &[&ImageRecord], ctx: &RecommendContext) -> Result<Vec<u8>, PipelineError> {
    let key = grid_key(&ctx.grid, images);
    if let Some(bytes) = ctx.cache.as_ref().and_then(|c| c.get("grids", &key, "png")) {
        return Ok(bytes);
    }
    let pixels = ctx.pixels.ok_or_else(|| {
        PipelineError::Grid(GridError::Undecodable {
            image_id: images.first().map(|i| i.image_id.clone()).unwrap_or_default(),
            message: "no pixel source configured".into(),
        })
    })?;
    let sources: Vec<GridSource> = images.iter().map(|i| pixels.source(i)).collect();
    let png = gridify(&sources, &ctx.grid)?.to_png()?;
    if let Some(cache) = &ctx.cache {
        cache.put("grids", &key, "png", &png)?;
    }
    Ok(png)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunSummary {
    pub total: usize,
    pub computed: usize,
    pub resumed: usize,
    pub failures: Vec<(String, String)>,
}

impl RunSummary {
    /// More than 1% of examples failed.
    pub fn too_many_failures(&self) -> bool {
        self.failures.len() * 100 > self.total
    }
}

/// Side file holding results finished by an interrupted run.
pub fn progress_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".partial");
    output.with_file_name(name)
}

fn read_finished(path: &Path, into: &mut HashMap<String, RankedResult>) {
    let Ok(text) = fs::read_to_string(path) else {
        return;
    };
    // A torn last line from an interrupted write is ignored.
    for line in text.lines() {
        if let Ok(r) = jsonl::from_line::<RankedResult>(line) {
            into.insert(r.query_id.clone(), r);
        }
    }
}

/// Runs every example on a pool of `max_inflight` workers and writes results
/// to `output` in benchmark order.
pub fn run_recommend(
    examples: &[BenchmarkExample],
    ctx: &RecommendContext,
    output: &Path,
    max_inflight: usize,
) -> Result<RunSummary, PipelineError> {
    let progress = progress_path(output);
    let mut done: HashMap<String, RankedResult> = HashMap::new();
    read_finished(output, &mut done);
    read_finished(&progress, &mut done);
    let wanted: HashSet<&str> = examples.iter().map(|e| e.query.query_id.as_str()).collect();
    done.retain(|k, _| wanted.contains(k.as_str()));
    let resumed = done.len();

    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| PipelineError::Cache { path, source }
    };
    if let Some(dir) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io(dir))?;
    }
    // Rewrite the side file so it holds only valid, relevant lines.
    {
        let mut w = BufWriter::new(File::create(&progress).map_err(io(&progress))?);
        for ex in examples {
            if let Some(r) = done.get(&ex.query.query_id) {
                writeln!(w, "{}", jsonl::to_line(r)).map_err(io(&progress))?;
            }
        }
        w.flush().map_err(io(&progress))?;
    }
    let sink = Mutex::new(BufWriter::new(
        OpenOptions::new().append(true).open(&progress).map_err(io(&progress))?,
    ));

    let todo: Vec<&BenchmarkExample> = examples
        .iter()
        .filter(|e| !done.contains_key(&e.query.query_id))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(max_inflight.max(1))
        .build()
        .map_err(|e| PipelineError::Pool(e.to_string()))?;
    let outcomes: Vec<(String, Result<RankedResult, String>)> = pool.install(|| {
        todo.par_iter()
            .map(|ex| {
                let qid = ex.query.query_id.clone();
                match recommend_one(ex, ctx) {
                    Ok(rec) => {
                        let mut w = sink.lock().unwrap();
                        let written = writeln!(w, "{}", jsonl::to_line(&rec.result)).and_then(|_| w.flush());
                        if let Err(e) = written {
                            log::warn!("{qid}: could not record progress: {e}");
                        }
                        (qid, Ok(rec.result))
                    }
                    Err(e) => {
                        log::warn!("{qid}: {e}");
                        (qid, Err(e.to_string()))
                    }
                }
            })
            .collect()
    });
    drop(sink);

    let mut summary = RunSummary {
        total: examples.len(),
        resumed,
        ..RunSummary::default()
    };
    for (qid, outcome) in outcomes {
        match outcome {
            Ok(r) => {
                summary.computed += 1;
                done.insert(qid, r);
            }
            Err(msg) => summary.failures.push((qid, msg)),
        }
    }
    let ordered: Vec<&RankedResult> = examples.iter().filter_map(|e| done.get(&e.query.query_id)).collect();
    let tmp = output.with_extension("jsonl.tmp");
    jsonl::write(&tmp, ordered)?;
    fs::rename(&tmp, output).map_err(io(output))?;
    if summary.failures.is_empty() {
        let _ = fs::remove_file(&progress);
    }
    Ok(summary)
}

/// Groups histories by user id.
pub fn histories_by_user(histories: Vec<VisualHistory>) -> HashMap<String, VisualHistory> {
    histories.into_iter().map(|h| (h.user_id.clone(), h)).collect()
}

/// Centroids keyed by category.
pub fn centroids_by_category(centroids: Vec<CategoryCentroid>) -> HashMap<String, CategoryCentroid> {
    centroids.into_iter().map(|c| (c.category.clone(), c)).collect()
}

/// Per-category pools of item-image embedding ids, sorted for determinism.
pub fn category_image_pools(examples: &[BenchmarkExample]) -> BTreeMap<String, Vec<String>> {
    let mut pools: BTreeMap<String, std::collections::BTreeSet<String>> = BTreeMap::new();
    for ex in examples {
        for c in &ex.candidates {
            let pool = pools.entry(c.category.clone()).or_default();
            pool.extend(c.images.iter().map(|i| i.image_id.clone()));
        }
    }
    pools.into_iter().map(|(k, v)| (k, v.into_iter().collect())).collect()
}
