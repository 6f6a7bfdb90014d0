use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use lenspipe_core::benchgen::HistoryPhoto;
use lenspipe_core::index::{build_centroid, CategoryCentroid, EmbeddingIndex};
use lenspipe_core::jsonl;
use lenspipe_core::model::{Embedding, ImageRecord};
use lenspipe_core::pipeline::category_image_pools;
use lenspipe_core::profile::{self, Augmenter, ProfileError, ProfileOptions, ReplayAugmenter, ReplayRecord};
use lenspipe_core::store::EmbeddingStore;
use serde::{Deserialize, Serialize};

use crate::{ensure_dir, images_root, load_benchmark, load_config, load_index, prompt_set, remote_augmenter};

#[derive(Debug, Clone)]
pub struct BuildProfilesArgs {
    pub histories: PathBuf,
    /// Raw (unnormalized) embedding store keyed by image id.
    pub embeddings: PathBuf,
    pub out: PathBuf,
    pub config: Option<PathBuf>,
    /// Recorded augmenter outputs used instead of a live service.
    pub replay: Option<PathBuf>,
    pub images_root: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ProfilesReport {
    pub users: usize,
    pub images: usize,
    pub degraded: usize,
    pub skipped_users: Vec<String>,
}

/// Raw vectors keyed by image id, looked up through `ImageRecord::image_id`.
struct RawEmbeddings(HashMap<String, Vec<f32>>);

impl profile::EmbeddingSource for RawEmbeddings {
    fn embedding(&self, image: &ImageRecord) -> Result<Vec<f32>, profile::ProviderError> {
        self.0
            .get(&image.image_id)
            .cloned()
            .ok_or_else(|| profile::ProviderError(format!("no embedding for {}", image.image_id)))
    }
}

pub fn build_profiles(args: &BuildProfilesArgs) -> Result<ProfilesReport> {
    let cfg = load_config(args.config.as_deref())?;
    let photos: Vec<HistoryPhoto> = jsonl::read(&args.histories)?;
    let raw = EmbeddingStore::load(&args.embeddings).with_context(|| format!("reading {}", args.embeddings.display()))?;
    let raw = RawEmbeddings(raw.records.into_iter().collect());

    let augmenter: Box<dyn Augmenter> = match &args.replay {
        Some(path) => {
            let records: Vec<ReplayRecord> = jsonl::read_plain(path)?;
            Box::new(ReplayAugmenter::new(records))
        }
        None => Box::new(remote_augmenter(cfg.augmenter())?),
    };
    let prompts = prompt_set(&cfg)?;
    let opts = ProfileOptions {
        max_inflight: cfg.augmenter().max_inflight,
        category: None,
    };
    let root = images_root(args.images_root.as_ref(), &cfg);

    let mut by_user: BTreeMap<&str, Vec<ImageRecord>> = BTreeMap::new();
    for p in &photos {
        let (width, height) = root
            .as_ref()
            .and_then(|r| image::image_dimensions(r.join(&p.pixels_ref)).ok())
            .unwrap_or((0, 0));
        by_user.entry(p.user_id.as_str()).or_default().push(ImageRecord {
            image_id: p.image_id.clone(),
            pixels_ref: p.pixels_ref.clone(),
            width,
            height,
            taken_order: p.taken_order,
        });
    }

    let mut index = EmbeddingIndex::new();
    let mut records = Vec::new();
    let mut report = ProfilesReport::default();
    for (user, images) in by_user {
        match profile::build_profile(user, &images, augmenter.as_ref(), &raw, &mut index, &prompts, &opts) {
            Ok((history, r)) => {
                for w in &r.warnings {
                    log::warn!("{user}: {w}");
                }
                report.users += 1;
                report.images += history.len();
                report.degraded += r.degraded;
                records.extend(profile::to_records(&history));
            }
            Err(e @ (ProfileError::AllFailed(_) | ProfileError::NoImages(_))) => {
                log::warn!("skipping {user}: {e}");
                report.skipped_users.push(user.to_string());
            }
            Err(e) => return Err(e).with_context(|| format!("profile for {user}")),
        }
    }
    if report.users == 0 {
        bail!("no profile could be built");
    }
    ensure_dir(&args.out)?;
    jsonl::write(&args.out.join("profiles.jsonl"), &records)?;
    EmbeddingStore::from_index(&index).save(&args.out.join("embeddings.lensemb"))?;
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct BuildCentroidsArgs {
    pub benchmark: PathBuf,
    /// Normalized store holding item-image embeddings.
    pub embeddings: PathBuf,
    pub out: PathBuf,
    /// Extra pool entries, one `{category, image_id}` object per line.
    pub pool: Option<PathBuf>,
    pub config: Option<PathBuf>,
    pub n: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub category: String,
    pub image_id: String,
}

pub fn build_centroids(args: &BuildCentroidsArgs) -> Result<Vec<CategoryCentroid>> {
    let cfg = load_config(args.config.as_deref())?;
    let n = args.n.unwrap_or(cfg.n_centroid);
    let seed = args.seed.unwrap_or(cfg.seed);
    let examples = load_benchmark(&args.benchmark)?;
    let index = load_index(&args.embeddings)?;

    let mut pools = category_image_pools(&examples);
    if let Some(path) = &args.pool {
        let extra: Vec<PoolEntry> = jsonl::read_plain(path)?;
        for e in extra {
            pools.entry(e.category).or_default().push(e.image_id);
        }
        for ids in pools.values_mut() {
            ids.sort();
            ids.dedup();
        }
    }

    let mut centroids = Vec::new();
    for (category, ids) in &pools {
        let pool: Vec<Embedding> = ids.iter().filter_map(|id| index.get(id).cloned()).collect();
        if pool.len() < ids.len() {
            log::warn!("{category}: {} of {} pool images have no embedding", ids.len() - pool.len(), ids.len());
        }
        if pool.is_empty() {
            log::warn!("{category}: empty pool, no centroid");
            continue;
        }
        if pool.len() < n {
            log::info!("{category}: pool of {} is smaller than n={n}, using all", pool.len());
        }
        centroids.push(build_centroid(category, &pool, n, seed)?);
    }
    if centroids.is_empty() {
        bail!("no category has any embedded pool image");
    }
    if let Some(dir) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    jsonl::write(&args.out, &centroids)?;
    Ok(centroids)
}
