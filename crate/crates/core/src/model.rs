//! Shared domain types used across the pipeline.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Captions longer than this many whitespace-delimited words are truncated.
pub const MAX_CAPTION_WORDS: usize = 30;

/// Stored embeddings satisfy `|‖v‖₂ − 1| ≤ NORM_TOLERANCE`.
pub const NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbeddingError {
    #[error("zero vector")]
    ZeroVector,
    #[error("empty vector")]
    Empty,
    #[error("non-finite component at index {0}")]
    NonFinite(usize),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },
}

/// An L2-normalized embedding vector.
///
/// Construction always normalizes; a vector that is already unit length
/// (within [`NORM_TOLERANCE`]) is kept bit-for-bit, so normalizing twice is a
/// no-op.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f32>", into = "Vec<f32>")]
pub struct Embedding {
    values: Vec<f32>,
}

impl Embedding {
    pub fn normalize(raw: &[f32]) -> Result<Self, EmbeddingError> {
        if raw.is_empty() {
            return Err(EmbeddingError::Empty);
        }
        if let Some(i) = raw.iter().position(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite(i));
        }
        let norm = l2_norm(raw);
        if norm == 0.0 {
            return Err(EmbeddingError::ZeroVector);
        }
        if (norm - 1.0).abs() <= NORM_TOLERANCE {
            return Ok(Self { values: raw.to_vec() });
        }
        let values = raw.iter().map(|&v| (f64::from(v) / norm) as f32).collect();
        Ok(Self { values })
    }

    /// Normalizes an `f64` vector (e.g. an accumulated mean).
    pub fn normalize_f64(raw: &[f64]) -> Result<Self, EmbeddingError> {
        if raw.is_empty() {
            return Err(EmbeddingError::Empty);
        }
        if let Some(i) = raw.iter().position(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite(i));
        }
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(EmbeddingError::ZeroVector);
        }
        let scaled: Vec<f32> = raw.iter().map(|v| (v / norm) as f32).collect();
        Self::normalize(&scaled)
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.values)
    }

    /// Cosine similarity. Both sides are unit length, so this is the dot product
    /// accumulated in `f64` and clamped to `[-1, 1]`.
    pub fn cosine(&self, other: &Embedding) -> Result<f64, EmbeddingError> {
        if self.dim() != other.dim() {
            return Err(EmbeddingError::DimMismatch {
                expected: self.dim(),
                actual: other.dim(),
            });
        }
        let dot: f64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| f64::from(a) * f64::from(b))
            .sum();
        Ok(dot.clamp(-1.0, 1.0))
    }
}

impl TryFrom<Vec<f32>> for Embedding {
    type Error = EmbeddingError;

    fn try_from(v: Vec<f32>) -> Result<Self, Self::Error> {
        Embedding::normalize(&v)
    }
}

impl From<Embedding> for Vec<f32> {
    fn from(e: Embedding) -> Self {
        e.values
    }
}

fn l2_norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub pixels_ref: String,
    pub width: u32,
    pub height: u32,
    pub taken_order: u64,
}

/// Truncates a caption to [`MAX_CAPTION_WORDS`] words. Returns the caption and
/// whether truncation happened.
pub fn truncate_caption(caption: &str) -> (String, bool) {
    let words: Vec<&str> = caption.split_whitespace().collect();
    if words.len() <= MAX_CAPTION_WORDS {
        (words.join(" "), false)
    } else {
        (words[..MAX_CAPTION_WORDS].join(" "), true)
    }
}

/// Lowercases, collapses internal whitespace and drops empties and duplicates
/// while keeping first-seen order.
pub fn canonicalize_aspects<I, S>(words: I) -> Vec<String>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for w in words {
        let w = w
            .as_ref()
            .split_whitespace()
            .collect::<Vec<_>>()
            .join(" ")
            .to_lowercase();
        if !w.is_empty() && seen.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

/// Per-image unit of the user profile: image, caption, aspect words, embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumTriplet {
    pub image: ImageRecord,
    pub caption: String,
    pub aspect_words: Vec<String>,
    pub embedding: Embedding,
    /// Set when caption/aspect generation failed for this image.
    #[serde(default)]
    pub degraded: bool,
}

impl SpectrumTriplet {
    /// Builds a triplet, enforcing the caption word cap and aspect-word
    /// canonicalization. A caption over the cap is truncated and logged.
    pub fn new(
        image: ImageRecord,
        caption: &str,
        aspect_words: &[String],
        embedding: Embedding,
    ) -> Self {
        let (caption, truncated) = truncate_caption(caption);
        if truncated {
            log::warn!(
                "caption for {} truncated to {} words",
                image.image_id,
                MAX_CAPTION_WORDS
            );
        }
        Self {
            image,
            caption,
            aspect_words: canonicalize_aspects(aspect_words),
            embedding,
            degraded: false,
        }
    }

    /// True when neither caption nor aspect words carry any text.
    pub fn is_text_empty(&self) -> bool {
        self.caption.trim().is_empty() && self.aspect_words.is_empty()
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HistoryError {
    #[error("visual history for user {0} is empty")]
    Empty(String),
    #[error("duplicate image_id {image_id} in history of user {user_id}")]
    DuplicateImage { user_id: String, image_id: String },
}

/// A user's chronological photo history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisualHistory {
    pub user_id: String,
    items: Vec<SpectrumTriplet>,
}

impl VisualHistory {
    /// Sorts items by `taken_order` and checks for emptiness and duplicate ids.
    pub fn new(
        user_id: impl Into<String>,
        mut items: Vec<SpectrumTriplet>,
    ) -> Result<Self, HistoryError> {
        let user_id = user_id.into();
        if items.is_empty() {
            return Err(HistoryError::Empty(user_id));
        }
        let mut seen = HashSet::new();
        for t in &items {
            if !seen.insert(t.image.image_id.as_str()) {
                return Err(HistoryError::DuplicateImage {
                    user_id,
                    image_id: t.image.image_id.clone(),
                });
            }
        }
        items.sort_by_key(|t| t.image.taken_order);
        Ok(Self { user_id, items })
    }

    pub fn items(&self) -> &[SpectrumTriplet] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// The slice of history taken strictly before `cutoff`, or `None` if it
    /// would be empty.
    pub fn before(&self, cutoff: u64) -> Option<VisualHistory> {
        let items: Vec<_> = self
            .items
            .iter()
            .filter(|t| t.image.taken_order < cutoff)
            .cloned()
            .collect();
        if items.is_empty() {
            None
        } else {
            Some(VisualHistory {
                user_id: self.user_id.clone(),
                items,
            })
        }
    }

    pub fn get(&self, image_id: &str) -> Option<&SpectrumTriplet> {
        self.items.iter().find(|t| t.image.image_id == image_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn is_valid(&self) -> bool {
        (-90.0..=90.0).contains(&self.lat) && (-180.0..=180.0).contains(&self.lon)
    }
}

/// A recommendable business.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateItem {
    pub item_id: String,
    pub name: String,
    pub description: String,
    pub category: String,
    #[serde(default)]
    pub images: Vec<ImageRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location: Option<GeoPoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rating: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub query_id: String,
    pub user_id: String,
    pub category: String,
    pub question_text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkExample {
    pub query: Query,
    /// History is every image with `taken_order < history_cutoff`.
    pub history_cutoff: u64,
    pub candidates: Vec<CandidateItem>,
    pub ground_truth_ids: BTreeSet<String>,
    /// Time of the anchoring visit, used by temporal splits.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<i64>,
}

impl BenchmarkExample {
    pub fn candidate_ids(&self) -> Vec<String> {
        self.candidates.iter().map(|c| c.item_id.clone()).collect()
    }
}

/// Dataset-level bounds checked by [`validate_example`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExampleLimits {
    pub fc_min: usize,
    pub gtc_min: usize,
}

pub fn validate_example(ex: &BenchmarkExample, limits: ExampleLimits) -> Vec<String> {
    let mut violations = Vec::new();
    let ids: HashSet<&str> = ex.candidates.iter().map(|c| c.item_id.as_str()).collect();
    if ids.len() != ex.candidates.len() {
        violations.push("candidates: duplicate item_id".to_string());
    }
    if !ex.ground_truth_ids.iter().all(|g| ids.contains(g.as_str())) {
        violations.push("ground_truth_ids ⊄ candidates".to_string());
    }
    if ex.candidates.len() < limits.fc_min {
        violations.push("|candidates| < fc_min".to_string());
    }
    if ex.ground_truth_ids.len() < limits.gtc_min {
        violations.push("|ground_truth_ids| < gtc_min".to_string());
    }
    if ex.query.category.trim().is_empty() {
        violations.push("query.category: empty".to_string());
    }
    if ex.candidates.iter().any(|c| c.category != ex.query.category) {
        violations.push("candidates: category differs from query.category".to_string());
    }
    if ex
        .candidates
        .iter()
        .filter_map(|c| c.location)
        .any(|p| !p.is_valid())
    {
        violations.push("candidates: location out of range".to_string());
    }
    violations
}

/// Per-candidate scores and the induced ranking for one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedResult {
    pub query_id: String,
    pub scores: BTreeMap<String, f64>,
    /// Descending score, ties by ascending item_id.
    pub ranking: Vec<String>,
}
