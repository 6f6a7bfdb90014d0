//! Command implementations behind the `lenspipe` binary.
//!
//! Each subcommand is a plain function taking an argument struct, so tests can
//! drive the same code paths as the binary.

pub mod bench;
pub mod demo;
pub mod export;
pub mod profiles;
pub mod run;
pub mod validate;

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use lenspipe_core::config::{BackendConfig, BackendKind, PipelineConfig};
use lenspipe_core::index::{CategoryCentroid, EmbeddingIndex};
use lenspipe_core::jsonl;
use lenspipe_core::matcher::MatchTemplate;
use lenspipe_core::model::{BenchmarkExample, VisualHistory};
use lenspipe_core::profile::{self, PromptSet, ProfileRecord, RemoteAugmenter};
use lenspipe_core::scorer::{OracleScorer, RandomScorer, RemoteScorer, Scorer};
use lenspipe_core::store::EmbeddingStore;
use lenspipe_core::wire::HttpTransport;

/// Loads `path` or the defaults, then applies the endpoint environment override.
pub fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    let mut cfg = match path {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    cfg.apply_env();
    Ok(cfg)
}

pub fn load_index(path: &Path) -> Result<EmbeddingIndex> {
    let store = EmbeddingStore::load(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(store.to_index()?)
}

pub fn load_benchmark(path: &Path) -> Result<Vec<BenchmarkExample>> {
    Ok(jsonl::read(path)?)
}

pub fn load_histories(profiles: &Path, index: &EmbeddingIndex) -> Result<Vec<VisualHistory>> {
    let records: Vec<ProfileRecord> = jsonl::read(profiles)?;
    Ok(profile::from_records(&records, index)?)
}

pub fn load_centroids(path: &Path) -> Result<HashMap<String, CategoryCentroid>> {
    let list: Vec<CategoryCentroid> = jsonl::read(path)?;
    Ok(lenspipe_core::pipeline::centroids_by_category(list))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

pub fn match_template(cfg: &PipelineConfig) -> Result<MatchTemplate> {
    match &cfg.paths.match_template {
        Some(p) => Ok(MatchTemplate::parse(&read_text(p)?)?),
        None => Ok(MatchTemplate::default()),
    }
}

pub fn prompt_set(cfg: &PipelineConfig) -> Result<PromptSet> {
    if cfg.paths.caption_template.is_none() && cfg.paths.aspect_template.is_none() {
        return Ok(PromptSet::default());
    }
    let caption = match &cfg.paths.caption_template {
        Some(p) => read_text(p)?,
        None => profile::DEFAULT_CAPTION_TEMPLATE.to_string(),
    };
    let aspects = match &cfg.paths.aspect_template {
        Some(p) => read_text(p)?,
        None => profile::DEFAULT_ASPECT_TEMPLATE.to_string(),
    };
    Ok(PromptSet::new(&caption, &aspects)?)
}

pub fn make_scorer(backend: &BackendConfig, seed: u64) -> Result<Box<dyn Scorer>> {
    Ok(match backend.kind {
        BackendKind::Oracle => Box::new(OracleScorer),
        BackendKind::Random => Box::new(RandomScorer { seed }),
        BackendKind::Remote => Box::new(RemoteScorer::http(
            backend.require_endpoint()?,
            backend.timeout(),
            backend.retries,
        )),
    })
}

pub fn remote_augmenter(backend: &BackendConfig) -> Result<RemoteAugmenter> {
    if backend.kind != BackendKind::Remote {
        bail!("augmenter backend must be remote, or pass --replay");
    }
    let transport = HttpTransport::new(backend.require_endpoint()?, backend.timeout());
    Ok(RemoteAugmenter::new(Box::new(transport), backend.retries))
}

pub(crate) fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

pub(crate) fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Resolves the image root: explicit flag, then config, then none.
pub(crate) fn images_root(flag: Option<&PathBuf>, cfg: &PipelineConfig) -> Option<PathBuf> {
    flag.cloned().or_else(|| cfg.paths.images_root.clone())
}
