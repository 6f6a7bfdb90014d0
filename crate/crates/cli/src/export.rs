//! Training-data export: grid-caption pretraining pairs and joint
//! aspect/match examples.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use lenspipe_core::grid::{gridify, GridSource, SourcePixels, GridSpec};
use lenspipe_core::index::retrieve_top_w;
use lenspipe_core::jsonl;
use lenspipe_core::matcher::{build_match_prompt, QueryProfile};
use lenspipe_core::model::{BenchmarkExample, ImageRecord};
use lenspipe_core::pipeline::{self, FilePixels, PixelSource};
use lenspipe_core::refine::{
    build_grid_caption_example, refine, AspectPart, GridCaptionRecord, GtContainmentSelector, JointExample, MatchPart,
    TrainRecord,
};
use serde::{Deserialize, Serialize};

use crate::{
    ensure_dir, images_root, load_benchmark, load_centroids, load_config, load_histories, load_index, match_template,
    prompt_set,
};

#[derive(Debug, Clone)]
pub struct ExportArgs {
    pub benchmark: PathBuf,
    pub profiles: PathBuf,
    pub embeddings: PathBuf,
    pub centroids: PathBuf,
    /// Directory with `docci_descriptions.jsonlines` and `images/`.
    pub docci: PathBuf,
    pub out: PathBuf,
    pub config: Option<PathBuf>,
    pub images_root: Option<PathBuf>,
    /// Number of grid-caption examples; defaults to one per `w` pairs.
    pub grid_examples: Option<usize>,
}

/// One line of the caption corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionPair {
    pub example_id: String,
    #[serde(default)]
    pub split: Option<String>,
    pub image_file: String,
    pub description: String,
}

pub const CAPTION_INDEX: &str = "docci_descriptions.jsonlines";

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ExportReport {
    pub grid_caption: usize,
    pub joint: usize,
    pub skipped: Vec<(String, String)>,
}

pub fn load_caption_pairs(dir: &Path) -> Result<Vec<CaptionPair>> {
    Ok(jsonl::read_plain(&dir.join(CAPTION_INDEX))?)
}

fn grid_caption_records(pairs: &[CaptionPair], dir: &Path, spec: &GridSpec, count: usize, seed: u64, out: &Path) -> Result<Vec<TrainRecord>> {
    let sources: Vec<GridSource> = pairs
        .iter()
        .map(|p| GridSource {
            image_id: p.example_id.clone(),
            pixels: SourcePixels::File(dir.join("images").join(&p.image_file)),
        })
        .collect();
    let captions: Vec<String> = pairs.iter().map(|p| p.description.clone()).collect();
    let mut records = Vec::with_capacity(count);
    for i in 0..count {
        let ex = build_grid_caption_example(&sources, &captions, spec, seed.wrapping_add(i as u64))?;
        let rel = format!("grids/caption-{i:06}.png");
        std::fs::write(out.join(&rel), ex.grid.to_png()?).with_context(|| format!("writing {rel}"))?;
        records.push(TrainRecord::GridCaption(GridCaptionRecord {
            grid_png_path: rel,
            target_text: ex.target_text,
        }));
    }
    Ok(records)
}

pub fn export_train(args: &ExportArgs) -> Result<ExportReport> {
    let cfg = load_config(args.config.as_deref())?;
    cfg.validate()?;
    let spec = cfg.grid_spec()?;
    let Some(root) = images_root(args.images_root.as_ref(), &cfg) else {
        bail!("export-train needs --images-root to render profile grids");
    };
    let pixels = FilePixels { root };

    let pairs = load_caption_pairs(&args.docci)?;
    if pairs.len() < cfg.w {
        bail!("caption corpus has {} pairs, a grid needs {}", pairs.len(), cfg.w);
    }
    ensure_dir(&args.out.join("grids"))?;
    let count = args.grid_examples.unwrap_or(pairs.len() / cfg.w);
    let mut records = grid_caption_records(&pairs, &args.docci, &spec, count, cfg.seed, &args.out)?;
    let mut report = ExportReport {
        grid_caption: records.len(),
        ..ExportReport::default()
    };

    let examples = load_benchmark(&args.benchmark)?;
    let index = load_index(&args.embeddings)?;
    let histories = pipeline::histories_by_user(load_histories(&args.profiles, &index)?);
    let centroids = load_centroids(&args.centroids)?;
    let template = match_template(&cfg)?;
    let prompts = prompt_set(&cfg)?;

    for (i, ex) in examples.iter().enumerate() {
        let qid = ex.query.query_id.clone();
        let joint = (|| -> Result<JointExample> {
            let history = histories
                .get(&ex.query.user_id)
                .and_then(|h| h.before(ex.history_cutoff))
                .context("no history before the cutoff")?;
            let centroid = centroids.get(&ex.query.category).context("no centroid")?;
            let retrieved = retrieve_top_w(&history, centroid, cfg.w)?;
            let source = retrieved
                .image_ids
                .iter()
                .filter_map(|id| history.get(id))
                .find(|t| !t.degraded && !t.aspect_words.is_empty())
                .context("no retrieved image has aspect words")?;
            let refined = refine(
                &source.image.image_id,
                source.aspect_words.clone(),
                &mut GtContainmentSelector,
                &ground_truth_texts(ex),
                cfg.max_refine_rounds,
            );
            let aspect = AspectPart {
                image_ref: source.image.pixels_ref.clone(),
                prompt: prompts.render_aspect_prompt(Some(&ex.query.category))?,
                target_words: refined.current().to_vec(),
            };

            let profile = QueryProfile::from_retrieval(&history, &retrieved, spec.d)?;
            let prompt = build_match_prompt(&ex.query, &profile, &ex.candidates, &template, None)?;
            let images: Vec<&ImageRecord> = retrieved
                .image_ids
                .iter()
                .filter_map(|id| history.get(id).map(|t| &t.image))
                .collect();
            let sources: Vec<GridSource> = images.iter().map(|img| pixels.source(img)).collect();
            let rel = format!("grids/joint-{i:06}.png");
            std::fs::write(args.out.join(&rel), gridify(&sources, &spec)?.to_png()?)?;
            let labels = ex
                .candidates
                .iter()
                .map(|c| u8::from(ex.ground_truth_ids.contains(&c.item_id)))
                .collect();
            let match_part = MatchPart {
                prompt: prompt.text,
                grid_png_path: rel,
                labels,
            };
            Ok(JointExample::new(aspect, match_part, cfg.lambda)?)
        })();
        match joint {
            Ok(j) => {
                records.push(TrainRecord::Joint(j));
                report.joint += 1;
            }
            Err(e) => {
                log::warn!("{qid}: skipped: {e:#}");
                report.skipped.push((qid, format!("{e:#}")));
            }
        }
    }
    jsonl::write(&args.out.join("train.jsonl"), &records)?;
    Ok(report)
}

/// `name description` of every ground-truth candidate.
pub fn ground_truth_texts(ex: &BenchmarkExample) -> Vec<String> {
    ex.candidates
        .iter()
        .filter(|c| ex.ground_truth_ids.contains(&c.item_id))
        .map(|c| format!("{} {}", c.name, c.description))
        .collect()
}
