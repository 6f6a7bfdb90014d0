use std::path::PathBuf;

use anyhow::{bail, Result};
use lenspipe_core::config::BackendKind;
use lenspipe_core::eval::{self, Dimension, EvalError, EvalReport};
use lenspipe_core::jsonl;
use lenspipe_core::model::RankedResult;
use lenspipe_core::pipeline::{self, ArtifactCache, FilePixels, PixelSource, RecommendContext, RunSummary};

use crate::{images_root, load_benchmark, load_centroids, load_config, load_histories, load_index, make_scorer, match_template};

#[derive(Debug, Clone, Default)]
pub struct RecommendArgs {
    pub benchmark: PathBuf,
    pub profiles: PathBuf,
    pub embeddings: PathBuf,
    pub centroids: PathBuf,
    pub out: PathBuf,
    pub config: Option<PathBuf>,
    pub backend: Option<BackendKind>,
    pub endpoint: Option<String>,
    pub images_root: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub max_inflight: Option<usize>,
    /// Render grids even for text-only scorers.
    pub always_render: bool,
}

pub fn recommend(args: &RecommendArgs) -> Result<RunSummary> {
    let mut cfg = load_config(args.config.as_deref())?;
    if let Some(kind) = args.backend {
        cfg.backend.kind = kind;
    }
    cfg.apply_endpoint_override(args.endpoint.clone());
    if let Some(n) = args.max_inflight {
        cfg.backend.max_inflight = n;
    }
    cfg.validate()?;

    let examples = load_benchmark(&args.benchmark)?;
    let index = load_index(&args.embeddings)?;
    let histories = pipeline::histories_by_user(load_histories(&args.profiles, &index)?);
    let centroids = load_centroids(&args.centroids)?;
    let scorer = make_scorer(&cfg.backend, cfg.seed)?;
    let template = match_template(&cfg)?;
    let pixels = images_root(args.images_root.as_ref(), &cfg).map(|root| FilePixels { root });
    let cache = args.cache_dir.clone().or_else(|| cfg.paths.cache_dir.clone()).map(ArtifactCache::new);

    let ctx = RecommendContext {
        histories: &histories,
        centroids: &centroids,
        scorer: scorer.as_ref(),
        template: &template,
        grid: cfg.grid_spec()?,
        w: cfg.w,
        pixels: pixels.as_ref().map(|p| p as &dyn PixelSource),
        always_render: args.always_render,
        cache,
    };
    let summary = pipeline::run_recommend(&examples, &ctx, &args.out, cfg.backend.max_inflight)?;
    for (qid, msg) in summary.failures.iter().take(20) {
        log::warn!("{qid} failed: {msg}");
    }
    Ok(summary)
}

#[derive(Debug, Clone)]
pub struct EvalArgs {
    pub results: PathBuf,
    pub benchmark: PathBuf,
    pub out: Option<PathBuf>,
    pub candidate_bin: u64,
    pub history_bin: u64,
}

impl Default for EvalArgs {
    fn default() -> Self {
        Self {
            results: PathBuf::new(),
            benchmark: PathBuf::new(),
            out: None,
            candidate_bin: eval::DEFAULT_CANDIDATE_BIN,
            history_bin: eval::DEFAULT_HISTORY_BIN,
        }
    }
}

pub fn evaluate(args: &EvalArgs) -> Result<EvalReport> {
    let results: Vec<RankedResult> = jsonl::read(&args.results)?;
    let examples = load_benchmark(&args.benchmark)?;
    let dims = [
        Dimension::Category,
        Dimension::CandidateCount { bin: args.candidate_bin },
        Dimension::HistoryLength { bin: args.history_bin },
    ];
    let report = match eval::evaluate(&results, &examples, &dims) {
        Ok(r) => r,
        Err(EvalError::Mismatch { missing, extra }) => bail!(
            "results and benchmark disagree: {} missing ({}), {} extra ({})",
            missing.len(),
            preview(&missing),
            extra.len(),
            preview(&extra)
        ),
        Err(e) => return Err(e.into()),
    };
    if let Some(dir) = &args.out {
        report.write_to(dir)?;
    }
    Ok(report)
}

fn preview(ids: &[String]) -> String {
    let mut s = ids.iter().take(5).cloned().collect::<Vec<_>>().join(", ");
    if ids.len() > 5 {
        s.push_str(", ...");
    }
    s
}
