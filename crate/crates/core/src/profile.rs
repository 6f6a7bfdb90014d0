//! Offline spectrum-profile construction.
//!
//! Each history image gets a caption and a list of aspect words from an
//! augmenter, and an embedding from an embedding source. Augmenter failures
//! degrade a single triplet; a missing embedding fails the build.

use std::collections::{BTreeMap, HashMap};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::index::{EmbeddingIndex, IndexError};
use crate::model::{
    canonicalize_aspects, truncate_caption, HistoryError, ImageRecord, SpectrumTriplet,
    VisualHistory,
};
use crate::template::{Template, TemplateError};
use crate::wire::{
    call_with_retries, AugmentRequest, AugmentResponse, AugmentTask, JsonTransport, AUGMENT_PATH,
};

pub const CAPTION_SLOTS: &[&str] = &["Category", "Answer"];
pub const ASPECT_SLOTS: &[&str] = &["Category", "Answer"];

pub const DEFAULT_CAPTION_TEMPLATE: &str = "\
Describe this photo in at most 30 words. Mention only what is clearly visible \
and do not guess at anything you cannot see.
Caption: [[Answer]]";

pub const DEFAULT_ASPECT_TEMPLATE: &str = "\
List the aspect words of this photo: short words or phrases naming its salient \
objects, materials, styles and atmosphere (for example: dome, balcony). \
Give as many as the photo supports, separated by commas.
Aspect words: [[Answer]]";

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("no images for user {0}")]
    NoImages(String),
    #[error("every augmenter call failed for user {0}")]
    AllFailed(String),
    #[error("embedding for {image_id}: {message}")]
    Embedding { image_id: String, message: String },
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    History(#[from] HistoryError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("thread pool: {0}")]
    Pool(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{0}")]
pub struct ProviderError(pub String);

/// Produces caption or aspect text for one image.
pub trait Augmenter: Send + Sync {
    fn augment(&self, req: &AugmentRequest) -> Result<String, ProviderError>;
}

/// Supplies the raw embedding vector for one image.
pub trait EmbeddingSource: Send + Sync {
    fn embedding(&self, image: &ImageRecord) -> Result<Vec<f32>, ProviderError>;
}

impl EmbeddingSource for EmbeddingIndex {
    fn embedding(&self, image: &ImageRecord) -> Result<Vec<f32>, ProviderError> {
        self.get(&image.image_id)
            .map(|e| e.values().to_vec())
            .ok_or_else(|| ProviderError(format!("no stored embedding for {}", image.image_id)))
    }
}

impl EmbeddingSource for HashMap<String, Vec<f32>> {
    fn embedding(&self, image: &ImageRecord) -> Result<Vec<f32>, ProviderError> {
        self.get(&image.image_id)
            .cloned()
            .ok_or_else(|| ProviderError(format!("no stored embedding for {}", image.image_id)))
    }
}

/// Augmenter speaking the JSON augment protocol.
pub struct RemoteAugmenter {
    transport: Box<dyn JsonTransport>,
    retries: u32,
}

impl RemoteAugmenter {
    pub fn new(transport: Box<dyn JsonTransport>, retries: u32) -> Self {
        Self { transport, retries }
    }
}

impl Augmenter for RemoteAugmenter {
    fn augment(&self, req: &AugmentRequest) -> Result<String, ProviderError> {
        call_with_retries::<_, AugmentResponse>(self.transport.as_ref(), AUGMENT_PATH, req, self.retries)
            .map(|r| r.output_text)
            .map_err(|e| ProviderError(e.to_string()))
    }
}

/// Recorded augmenter outputs, keyed by `(image_ref, task)`.
#[derive(Debug, Clone, Default)]
pub struct ReplayAugmenter {
    outputs: HashMap<(String, AugmentTask), String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayRecord {
    pub image_ref: String,
    pub task: AugmentTask,
    pub output_text: String,
}

impl ReplayAugmenter {
    pub fn new(records: impl IntoIterator<Item = ReplayRecord>) -> Self {
        Self {
            outputs: records
                .into_iter()
                .map(|r| ((r.image_ref, r.task), r.output_text))
                .collect(),
        }
    }
}

impl Augmenter for ReplayAugmenter {
    fn augment(&self, req: &AugmentRequest) -> Result<String, ProviderError> {
        self.outputs
            .get(&(req.image_ref.clone(), req.task))
            .cloned()
            .ok_or_else(|| ProviderError(format!("no recorded {:?} output for {}", req.task, req.image_ref)))
    }
}

/// Caption and aspect prompt templates.
#[derive(Debug, Clone)]
pub struct PromptSet {
    caption: Template,
    aspects: Template,
}

impl Default for PromptSet {
    fn default() -> Self {
        Self::new(DEFAULT_CAPTION_TEMPLATE, DEFAULT_ASPECT_TEMPLATE).expect("default templates parse")
    }
}

impl PromptSet {
    pub fn new(caption: &str, aspects: &str) -> Result<Self, TemplateError> {
        Ok(Self {
            caption: Template::parse(caption, CAPTION_SLOTS)?,
            aspects: Template::parse(aspects, ASPECT_SLOTS)?,
        })
    }

    pub fn render_caption_prompt(&self, category: Option<&str>) -> Result<String, TemplateError> {
        self.caption.render(&slot_values(category))
    }

    pub fn render_aspect_prompt(&self, category: Option<&str>) -> Result<String, TemplateError> {
        self.aspects.render(&slot_values(category))
    }
}

fn slot_values(category: Option<&str>) -> BTreeMap<&'static str, String> {
    category
        .map(|c| ("Category", c.to_string()))
        .into_iter()
        .collect()
}

/// Splits augmenter output on commas and newlines, strips list bullets and
/// trailing periods, then canonicalizes.
pub fn parse_aspects(text: &str) -> Vec<String> {
    canonicalize_aspects(text.split([',', '\n']).map(|w| {
        w.trim()
            .trim_start_matches(['-', '*', '•'])
            .trim_end_matches('.')
            .trim()
    }))
}

#[derive(Debug, Clone)]
pub struct ProfileOptions {
    pub max_inflight: usize,
    /// Fills the `[[Category]]` slot when a template uses it.
    pub category: Option<String>,
}

impl Default for ProfileOptions {
    fn default() -> Self {
        Self {
            max_inflight: 4,
            category: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProfileReport {
    pub warnings: Vec<String>,
    pub degraded: usize,
}

struct Augmented {
    caption: Result<String, ProviderError>,
    aspects: Result<String, ProviderError>,
    embedding: Result<Vec<f32>, ProviderError>,
}

/// Builds one user's visual history. Embeddings are ingested into `index`.
pub fn build_profile(
    user_id: &str,
    images: &[ImageRecord],
    augmenter: &dyn Augmenter,
    embeddings: &dyn EmbeddingSource,
    index: &mut EmbeddingIndex,
    prompts: &PromptSet,
    opts: &ProfileOptions,
) -> Result<(VisualHistory, ProfileReport), ProfileError> {
    if images.is_empty() {
        return Err(ProfileError::NoImages(user_id.to_string()));
    }
    let category = opts.category.as_deref();
    let caption_prompt = prompts.render_caption_prompt(category)?;
    let aspect_prompt = prompts.render_aspect_prompt(category)?;
    let call = |img: &ImageRecord, task, prompt: &str| {
        augmenter.augment(&AugmentRequest {
            image_ref: img.pixels_ref.clone(),
            task,
            prompt_text: prompt.to_string(),
        })
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.max_inflight.max(1))
        .build()
        .map_err(|e| ProfileError::Pool(e.to_string()))?;
    let results: Vec<Augmented> = pool.install(|| {
        images
            .par_iter()
            .map(|img| Augmented {
                caption: call(img, AugmentTask::Caption, &caption_prompt),
                aspects: call(img, AugmentTask::Aspects, &aspect_prompt),
                embedding: embeddings.embedding(img),
            })
            .collect()
    });

    let report = Mutex::new(ProfileReport::default());
    let warn = |msg: String| {
        log::warn!("{msg}");
        report.lock().unwrap().warnings.push(msg);
    };
    let mut triplets = Vec::with_capacity(images.len());
    let mut failures = 0;
    for (img, res) in images.iter().zip(results) {
        let raw = res.embedding.map_err(|e| ProfileError::Embedding {
            image_id: img.image_id.clone(),
            message: e.0,
        })?;
        let embedding = index.ingest(&img.image_id, &raw)?.clone();
        let (caption, aspects) = match (res.caption, res.aspects) {
            (Ok(c), Ok(a)) => (c, a),
            (c, a) => {
                failures += 1;
                for e in [c.err(), a.err()].into_iter().flatten() {
                    warn(format!("{}: augmenter failed: {e}", img.image_id));
                }
                let mut t = SpectrumTriplet::new(img.clone(), "", &[], embedding);
                t.degraded = true;
                triplets.push(t);
                continue;
            }
        };
        if truncate_caption(&caption).1 {
            warn(format!("{}: caption truncated to 30 words", img.image_id));
        }
        triplets.push(SpectrumTriplet::new(
            img.clone(),
            &caption,
            &parse_aspects(&aspects),
            embedding,
        ));
    }
    if failures == images.len() {
        return Err(ProfileError::AllFailed(user_id.to_string()));
    }
    let mut report = report.into_inner().unwrap();
    report.degraded = failures;
    Ok((VisualHistory::new(user_id, triplets)?, report))
}

/// One persisted triplet. The embedding lives in the binary store under
/// `embedding_ref`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRecord {
    pub user_id: String,
    pub image_id: String,
    pub taken_order: u64,
    pub caption: String,
    pub aspects: Vec<String>,
    pub embedding_ref: String,
    pub pixels_ref: String,
    pub width: u32,
    pub height: u32,
    #[serde(default)]
    pub degraded: bool,
}

pub fn to_records(history: &VisualHistory) -> Vec<ProfileRecord> {
    history
        .items()
        .iter()
        .map(|t| ProfileRecord {
            user_id: history.user_id.clone(),
            image_id: t.image.image_id.clone(),
            taken_order: t.image.taken_order,
            caption: t.caption.clone(),
            aspects: t.aspect_words.clone(),
            embedding_ref: t.image.image_id.clone(),
            pixels_ref: t.image.pixels_ref.clone(),
            width: t.image.width,
            height: t.image.height,
            degraded: t.degraded,
        })
        .collect()
}

/// Regroups persisted records into histories, resolving embeddings from
/// `index`. Users come back in first-seen order.
pub fn from_records(
    records: &[ProfileRecord],
    index: &EmbeddingIndex,
) -> Result<Vec<VisualHistory>, ProfileError> {
    let mut order = Vec::new();
    let mut grouped: HashMap<&str, Vec<SpectrumTriplet>> = HashMap::new();
    for r in records {
        let embedding = index
            .get(&r.embedding_ref)
            .ok_or_else(|| IndexError::MissingEmbedding(r.image_id.clone()))?
            .clone();
        let mut t = SpectrumTriplet::new(
            ImageRecord {
                image_id: r.image_id.clone(),
                pixels_ref: r.pixels_ref.clone(),
                width: r.width,
                height: r.height,
                taken_order: r.taken_order,
            },
            &r.caption,
            &r.aspects,
            embedding,
        );
        t.degraded = r.degraded;
        let entry = grouped.entry(r.user_id.as_str()).or_default();
        if entry.is_empty() {
            order.push(r.user_id.as_str());
        }
        entry.push(t);
    }
    order
        .into_iter()
        .map(|u| Ok(VisualHistory::new(u, grouped.remove(u).unwrap())?))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Fixed;

    impl Augmenter for Fixed {
        fn augment(&self, req: &AugmentRequest) -> Result<String, ProviderError> {
            match req.task {
                AugmentTask::Caption if req.image_ref == "long.png" => {
                    Ok((0..35).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" "))
                }
                AugmentTask::Caption => Ok(format!("photo {}", req.image_ref)),
                AugmentTask::Aspects if req.image_ref == "bad.png" => Err(ProviderError("boom".into())),
                AugmentTask::Aspects => Ok("Dome, balcony, Dome".into()),
            }
        }
    }

    fn rec(id: &str, order: u64) -> ImageRecord {
        ImageRecord {
            image_id: id.into(),
            pixels_ref: format!("{id}.png"),
            width: 8,
            height: 8,
            taken_order: order,
        }
    }

    fn embeddings(ids: &[&str]) -> HashMap<String, Vec<f32>> {
        ids.iter()
            .enumerate()
            .map(|(i, id)| (id.to_string(), vec![1.0, i as f32 + 1.0]))
            .collect()
    }

    fn build(images: &[ImageRecord], emb: &HashMap<String, Vec<f32>>) -> Result<(VisualHistory, ProfileReport), ProfileError> {
        let mut index = EmbeddingIndex::new();
        build_profile("u1", images, &Fixed, emb, &mut index, &PromptSet::default(), &ProfileOptions::default())
    }

    #[test]
    fn builds_one_triplet_per_image_in_order() {
        let images = [rec("c", 2), rec("a", 0), rec("b", 1)];
        let (h, report) = build(&images, &embeddings(&["a", "b", "c"])).unwrap();
        assert_eq!(h.len(), 3);
        let ids: Vec<_> = h.items().iter().map(|t| t.image.image_id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        assert_eq!(h.items()[0].aspect_words, ["dome", "balcony"]);
        assert_eq!(h.items()[0].caption, "photo a.png");
        assert_eq!(report.degraded, 0);
    }

    #[test]
    fn long_caption_is_truncated_with_warning() {
        let (h, report) = build(&[rec("long", 0)], &embeddings(&["long"])).unwrap();
        assert_eq!(h.items()[0].caption.split_whitespace().count(), 30);
        assert_eq!(report.warnings.len(), 1);
    }

    #[test]
    fn failed_augmenter_degrades_single_triplet() {
        let (h, report) = build(&[rec("bad", 0), rec("ok", 1)], &embeddings(&["bad", "ok"])).unwrap();
        assert_eq!(h.len(), 2);
        assert!(h.items()[0].degraded && h.items()[0].is_text_empty());
        assert!(!h.items()[1].degraded);
        assert_eq!(report.degraded, 1);
        assert!(matches!(build(&[rec("bad", 0)], &embeddings(&["bad"])), Err(ProfileError::AllFailed(_))));
    }

    #[test]
    fn missing_embedding_fails() {
        assert!(matches!(
            build(&[rec("a", 0)], &HashMap::new()),
            Err(ProfileError::Embedding { .. })
        ));
    }

    #[test]
    fn aspect_parsing_accepts_commas_and_newlines() {
        assert_eq!(parse_aspects("Dome, balcony, Dome"), ["dome", "balcony"]);
        assert_eq!(parse_aspects("- arches\n- Marble floor.\n\n"), ["arches", "marble floor"]);
    }

    #[test]
    fn records_round_trip_through_index() {
        let images = [rec("a", 0), rec("b", 1)];
        let mut index = EmbeddingIndex::new();
        let (h, _) = build_profile(
            "u1",
            &images,
            &Fixed,
            &embeddings(&["a", "b"]),
            &mut index,
            &PromptSet::default(),
            &ProfileOptions::default(),
        )
        .unwrap();
        let back = from_records(&to_records(&h), &index).unwrap();
        assert_eq!(back, vec![h]);
        assert!(from_records(&to_records(&back[0]), &EmbeddingIndex::new()).is_err());
    }

    #[test]
    fn default_aspect_prompt_is_template_verbatim() {
        let p = PromptSet::default().render_aspect_prompt(None).unwrap();
        assert_eq!(p, DEFAULT_ASPECT_TEMPLATE.trim_end_matches("[[Answer]]"));
    }

    #[test]
    fn category_slot_is_filled() {
        let p = PromptSet::new(DEFAULT_CAPTION_TEMPLATE, "Aspects relevant to a [[Category]]: [[Answer]]").unwrap();
        assert_eq!(p.render_aspect_prompt(Some("museum")).unwrap(), "Aspects relevant to a museum: ");
        assert!(PromptSet::new(DEFAULT_CAPTION_TEMPLATE, "[[Categori]]").is_err());
    }
}
