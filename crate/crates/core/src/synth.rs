//! Synthetic benchmarks with planted structure.
//!
//! Each category has a topic direction in embedding space. Each user has a
//! few taste words per category, and their history photos of a category carry
//! those words as aspects. Ground-truth candidates mention the user's taste
//! words for the queried category; the others never do. A scorer that reads
//! the retrieved profile can therefore separate them, and a random one cannot.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::index::{EmbeddingIndex, IndexError};
use crate::model::{BenchmarkExample, CandidateItem, Embedding, ImageRecord, Query, SpectrumTriplet, VisualHistory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub users: usize,
    pub examples: usize,
    pub candidates: usize,
    pub ground_truths: usize,
    pub history_len: usize,
    pub categories: usize,
    pub dim: usize,
    /// Item images per category available for centroids.
    pub pool_per_category: usize,
    /// Attach one image to every candidate so centroids can be built from
    /// the benchmark alone.
    pub candidate_images: bool,
    /// Per-coordinate noise added to topic directions.
    pub noise: f32,
    pub vocab: usize,
    pub taste_words: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            users: 50,
            examples: 1000,
            candidates: 20,
            ground_truths: 1,
            history_len: 100,
            categories: 5,
            dim: 32,
            pool_per_category: 2000,
            candidate_images: false,
            noise: 0.15,
            vocab: 400,
            taste_words: 3,
            seed: 0,
        }
    }
}

pub const CATEGORY_NAMES: &[&str] = &[
    "museum", "park", "cafe", "bakery", "bookstore", "aquarium", "theater", "gallery", "brewery", "garden",
];

const SYLLABLES: &[&str] = &[
    "ka", "lo", "mi", "ren", "tu", "sa", "vel", "dor", "ni", "pa", "qui", "zo", "ber", "fa", "gil", "ho",
];

/// A pronounceable pseudo-word for vocabulary index `i`.
pub fn word(i: usize) -> String {
    let n = SYLLABLES.len();
    format!("{}{}{}", SYLLABLES[i % n], SYLLABLES[(i / n) % n], SYLLABLES[(i / (n * n)) % n])
}

pub fn category_name(c: usize) -> String {
    match CATEGORY_NAMES.get(c) {
        Some(n) => n.to_string(),
        None => format!("category{c}"),
    }
}

#[derive(Debug, Clone)]
pub struct SynthBench {
    pub examples: Vec<BenchmarkExample>,
    pub histories: Vec<VisualHistory>,
    /// Item-image embeddings per category, for centroids.
    pub item_pools: BTreeMap<String, Vec<(String, Embedding)>>,
}

impl SynthBench {
    /// Every history and item embedding in one index.
    pub fn index(&self) -> Result<EmbeddingIndex, IndexError> {
        let mut index = EmbeddingIndex::new();
        for h in &self.histories {
            for t in h.items() {
                index.insert(&t.image.image_id, t.embedding.clone())?;
            }
        }
        for pool in self.item_pools.values() {
            for (id, e) in pool {
                index.insert(id, e.clone())?;
            }
        }
        Ok(index)
    }

    pub fn pool(&self, category: &str) -> Vec<Embedding> {
        self.item_pools
            .get(category)
            .map(|p| p.iter().map(|(_, e)| e.clone()).collect())
            .unwrap_or_default()
    }
}

fn unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    loop {
        let v: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        if v.iter().any(|x| x.abs() > 1e-3) {
            return v;
        }
    }
}

fn noisy(rng: &mut ChaCha8Rng, topic: &[f32], noise: f32) -> Embedding {
    let v: Vec<f32> = topic.iter().map(|t| t + rng.random_range(-noise..=noise)).collect();
    Embedding::normalize(&v).expect("topic plus bounded noise is non-zero")
}

pub fn generate(cfg: &SynthConfig) -> SynthBench {
    assert!(cfg.categories >= 1 && cfg.users >= 1 && cfg.candidates >= 1);
    assert!(cfg.ground_truths >= 1 && cfg.ground_truths <= cfg.candidates);
    assert!(cfg.vocab >= cfg.categories * cfg.taste_words + 8, "vocabulary too small");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let topics: Vec<Vec<f32>> = (0..cfg.categories)
        .map(|_| {
            let v = unit(&mut rng, cfg.dim);
            let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
            v.into_iter().map(|x| x / n).collect()
        })
        .collect();
    let names: Vec<String> = (0..cfg.categories).map(category_name).collect();
    let vocab: Vec<String> = (0..cfg.vocab).map(word).collect();

    // taste[u][c]: the user's words for category c.
    let taste: Vec<Vec<Vec<String>>> = (0..cfg.users)
        .map(|_| {
            let mut words = vocab.clone();
            words.shuffle(&mut rng);
            (0..cfg.categories)
                .map(|c| words[c * cfg.taste_words..(c + 1) * cfg.taste_words].to_vec())
                .collect()
        })
        .collect();

    let histories: Vec<VisualHistory> = (0..cfg.users)
        .map(|u| {
            let items = (0..cfg.history_len)
                .map(|i| {
                    let c = (i + u) % cfg.categories;
                    let image = ImageRecord {
                        image_id: format!("u{u}/h{i}"),
                        pixels_ref: format!("u{u}/h{i}.png"),
                        width: 64,
                        height: 64,
                        taken_order: i as u64,
                    };
                    let aspects: Vec<String> = taste[u][c]
                        .choose_multiple(&mut rng, 2.min(cfg.taste_words))
                        .cloned()
                        .collect();
                    let emb = noisy(&mut rng, &topics[c], cfg.noise);
                    SpectrumTriplet::new(image, &format!("A photo at a {}", names[c]), &aspects, emb)
                })
                .collect();
            VisualHistory::new(format!("u{u}"), items).expect("non-empty, unique ids")
        })
        .collect();

    let item_pools = (0..cfg.categories)
        .map(|c| {
            let pool = (0..cfg.pool_per_category)
                .map(|j| (format!("item/{}/{j}", names[c]), noisy(&mut rng, &topics[c], cfg.noise)))
                .collect();
            (names[c].clone(), pool)
        })
        .collect();

    let mut examples = Vec::with_capacity(cfg.examples);
    let mut per_user = vec![0usize; cfg.users];
    for e in 0..cfg.examples {
        let u = e % cfg.users;
        let c = rng.random_range(0..cfg.categories);
        per_user[u] += 1;
        let own: BTreeSet<&String> = taste[u][c].iter().collect();
        let fillers: Vec<&String> = vocab.iter().filter(|w| !own.contains(w)).collect();
        let gt_slots: BTreeSet<usize> =
            rand::seq::index::sample(&mut rng, cfg.candidates, cfg.ground_truths).into_iter().collect();
        let qid = format!("u{u}-{}", per_user[u]);
        let candidates: Vec<CandidateItem> = (0..cfg.candidates)
            .map(|k| {
                let mut words: Vec<String> = fillers.choose_multiple(&mut rng, 3).map(|w| w.to_string()).collect();
                if gt_slots.contains(&k) {
                    words.extend(taste[u][c].choose_multiple(&mut rng, 2.min(cfg.taste_words)).cloned());
                    words.shuffle(&mut rng);
                }
                let item_id = format!("{qid}/c{k:03}");
                let images = if cfg.candidate_images {
                    vec![ImageRecord {
                        image_id: format!("{item_id}/img"),
                        pixels_ref: format!("items/{item_id}.png"),
                        width: 64,
                        height: 64,
                        taken_order: 0,
                    }]
                } else {
                    vec![]
                };
                CandidateItem {
                    item_id,
                    name: format!("{} {}", capitalize(&names[c]), k + 1),
                    description: format!("Known for {}.", words.join(", ")),
                    category: names[c].clone(),
                    images,
                    location: None,
                    rating: None,
                }
            })
            .collect();
        let ground_truth_ids = gt_slots.iter().map(|&k| candidates[k].item_id.clone()).collect();
        examples.push(BenchmarkExample {
            query: Query {
                query_id: qid,
                user_id: format!("u{u}"),
                category: names[c].clone(),
                question_text: format!("Recommend a nearby {}.", names[c]),
            },
            history_cutoff: cfg.history_len as u64,
            candidates,
            ground_truth_ids,
            timestamp: Some(e as i64),
        });
    }

    let mut bench = SynthBench {
        examples,
        histories,
        item_pools,
    };
    if cfg.candidate_images {
        for ex in &bench.examples {
            let c = names.iter().position(|n| *n == ex.query.category).expect("known category");
            let pool = bench.item_pools.get_mut(&names[c]).expect("pool per category");
            for cand in &ex.candidates {
                pool.push((cand.images[0].image_id.clone(), noisy(&mut rng, &topics[c], cfg.noise)));
            }
        }
    }
    bench
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}
