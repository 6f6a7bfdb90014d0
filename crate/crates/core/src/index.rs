//! Normalized embedding storage, category centroids and top-w cosine retrieval.

use std::cmp::Ordering;
use std::collections::HashMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Embedding, EmbeddingError, ImageRecord, VisualHistory};

/// Default centroid sample size.
pub const DEFAULT_CENTROID_SAMPLES: usize = 10_000;

/// Default embedding width, matching the CLIP ViT-L/14 family.
pub const DEFAULT_DIM: usize = 768;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IndexError {
    #[error("{id}: {source}")]
    Embedding { id: String, source: EmbeddingError },
    #[error("dimension mismatch for {id}: expected {expected}, got {actual}")]
    DimMismatch {
        id: String,
        expected: usize,
        actual: usize,
    },
    #[error("conflicting vector for already ingested id {0}")]
    Conflict(String),
    #[error("missing embedding for image {0}")]
    MissingEmbedding(String),
    #[error("empty vector pool for category {0}")]
    EmptyPool(String),
    #[error("sample size must be at least 1")]
    ZeroSampleSize,
    #[error("w must be at least 1")]
    ZeroWindow,
}

/// Single-writer store of normalized embeddings keyed by image id.
#[derive(Debug, Clone, Default)]
pub struct EmbeddingIndex {
    dim: Option<usize>,
    entries: HashMap<String, Embedding>,
    order: Vec<String>,
}

impl EmbeddingIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_dim(dim: usize) -> Self {
        Self {
            dim: Some(dim),
            ..Self::default()
        }
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Normalizes and stores `raw` under `id`. The first ingest fixes the
    /// dimension. Re-ingesting an identical pair is a no-op.
    pub fn ingest(&mut self, id: &str, raw: &[f32]) -> Result<&Embedding, IndexError> {
        if let Some(expected) = self.dim {
            if raw.len() != expected {
                return Err(IndexError::DimMismatch {
                    id: id.to_string(),
                    expected,
                    actual: raw.len(),
                });
            }
        }
        let emb = Embedding::normalize(raw).map_err(|source| IndexError::Embedding {
            id: id.to_string(),
            source,
        })?;
        self.insert(id, emb)
    }

    pub fn insert(&mut self, id: &str, emb: Embedding) -> Result<&Embedding, IndexError> {
        if let Some(expected) = self.dim {
            if emb.dim() != expected {
                return Err(IndexError::DimMismatch {
                    id: id.to_string(),
                    expected,
                    actual: emb.dim(),
                });
            }
        }
        match self.entries.get(id) {
            Some(existing) if *existing != emb => return Err(IndexError::Conflict(id.to_string())),
            Some(_) => {}
            None => {
                self.dim = Some(emb.dim());
                self.order.push(id.to_string());
                self.entries.insert(id.to_string(), emb);
            }
        }
        Ok(&self.entries[id])
    }

    pub fn get(&self, id: &str) -> Option<&Embedding> {
        self.entries.get(id)
    }

    /// Entries in ingest order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Embedding)> {
        self.order
            .iter()
            .map(move |id| (id.as_str(), &self.entries[id]))
    }

    /// Top-w retrieval over images whose embeddings live in this index.
    pub fn retrieve_top_w<'a, I>(
        &self,
        images: I,
        centroid: &CategoryCentroid,
        w: usize,
    ) -> Result<RetrievalResult, IndexError>
    where
        I: IntoIterator<Item = &'a ImageRecord>,
    {
        let mut scored = Vec::new();
        for img in images {
            let emb = self
                .get(&img.image_id)
                .ok_or_else(|| IndexError::MissingEmbedding(img.image_id.clone()))?;
            scored.push(Scored {
                image_id: img.image_id.clone(),
                taken_order: img.taken_order,
                similarity: cosine(&img.image_id, emb, &centroid.centroid)?,
            });
        }
        select_top(scored, w)
    }
}

/// Normalized mean embedding of sampled item images of one category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryCentroid {
    pub category: String,
    pub centroid: Embedding,
    pub sample_size: usize,
    pub sample_seed: u64,
}

/// Samples `min(n, pool.len())` vectors without replacement and returns their
/// normalized mean.
///
/// The sampled vectors are summed in a canonical (bitwise-sorted) order, so the
/// centroid depends only on the sampled multiset.
pub fn build_centroid(
    category: &str,
    pool: &[Embedding],
    n: usize,
    seed: u64,
) -> Result<CategoryCentroid, IndexError> {
    if n == 0 {
        return Err(IndexError::ZeroSampleSize);
    }
    if pool.is_empty() {
        return Err(IndexError::EmptyPool(category.to_string()));
    }
    let dim = pool[0].dim();
    if let Some(bad) = pool.iter().find(|e| e.dim() != dim) {
        return Err(IndexError::DimMismatch {
            id: category.to_string(),
            expected: dim,
            actual: bad.dim(),
        });
    }
    let take = n.min(pool.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<&Embedding> = sample(&mut rng, pool.len(), take)
        .into_iter()
        .map(|i| &pool[i])
        .collect();
    mean_centroid(category, &mut picked, seed)
}

fn mean_centroid(
    category: &str,
    picked: &mut [&Embedding],
    seed: u64,
) -> Result<CategoryCentroid, IndexError> {
    picked.sort_by(|a, b| {
        a.values()
            .iter()
            .map(|v| v.to_bits())
            .cmp(b.values().iter().map(|v| v.to_bits()))
    });
    let dim = picked[0].dim();
    let mut sum = vec![0.0f64; dim];
    for e in picked.iter() {
        for (acc, &v) in sum.iter_mut().zip(e.values()) {
            *acc += f64::from(v);
        }
    }
    let count = picked.len() as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
    let centroid = Embedding::normalize_f64(&mean).map_err(|source| IndexError::Embedding {
        id: category.to_string(),
        source,
    })?;
    Ok(CategoryCentroid {
        category: category.to_string(),
        centroid,
        sample_size: picked.len(),
        sample_seed: seed,
    })
}

/// Retrieved history images ordered by similarity to a category centroid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub image_ids: Vec<String>,
    pub similarities: Vec<f64>,
}

impl RetrievalResult {
    pub fn len(&self) -> usize {
        self.image_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.image_ids.is_empty()
    }
}

struct Scored {
    image_id: String,
    taken_order: u64,
    similarity: f64,
}

fn by_similarity(a: &Scored, b: &Scored) -> Ordering {
    b.similarity
        .total_cmp(&a.similarity)
        .then(a.taken_order.cmp(&b.taken_order))
}

fn cosine(id: &str, emb: &Embedding, centroid: &Embedding) -> Result<f64, IndexError> {
    emb.cosine(centroid).map_err(|_| IndexError::DimMismatch {
        id: id.to_string(),
        expected: centroid.dim(),
        actual: emb.dim(),
    })
}

fn select_top(mut scored: Vec<Scored>, w: usize) -> Result<RetrievalResult, IndexError> {
    if w == 0 {
        return Err(IndexError::ZeroWindow);
    }
    if scored.len() > w {
        scored.select_nth_unstable_by(w - 1, by_similarity);
        scored.truncate(w);
    }
    scored.sort_by(by_similarity);
    Ok(RetrievalResult {
        image_ids: scored.iter().map(|s| s.image_id.clone()).collect(),
        similarities: scored.iter().map(|s| s.similarity).collect(),
    })
}

/// Returns the `min(w, |history|)` history images most similar to the
/// centroid, descending by cosine, ties by ascending `taken_order`.
pub fn retrieve_top_w(
    history: &VisualHistory,
    centroid: &CategoryCentroid,
    w: usize,
) -> Result<RetrievalResult, IndexError> {
    let scored = history
        .items()
        .iter()
        .map(|t| {
            Ok(Scored {
                image_id: t.image.image_id.clone(),
                taken_order: t.image.taken_order,
                similarity: cosine(&t.image.image_id, &t.embedding, &centroid.centroid)?,
            })
        })
        .collect::<Result<Vec<_>, IndexError>>()?;
    select_top(scored, w)
}
